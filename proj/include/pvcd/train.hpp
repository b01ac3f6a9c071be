#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvcd/data.hpp"
#include "pvcd/loss.hpp"
#include "pvcd/metrics.hpp"
#include "pvcd/model.hpp"
#include "pvcd/optim.hpp"
#include "pvcd/weight_file.hpp"

namespace pvcd {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    double lr = 4e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t crop_size = 0;  // 0: the model's input size
    bool flips = true;
    double val_split = 0.2;
    std::uint64_t seed = 0;
    std::size_t threads = 0;  // 0: one per hardware thread; results do not depend on it

    void validate() const;
    AdamWConfig optimizer() const { return {lr, weight_decay, beta1, beta2, eps}; }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_f1 = 0.0;
    double val_iou = 0.0;
    double val_oa = 0.0;

    /// One line of the training log: {epoch, train_loss, val_f1, val_iou, val_oa}.
    std::string to_json() const;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    MetricReport best_val;
    std::vector<WeightEntry> best_checkpoint;  // trainable parameters at best_epoch
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW on the trainable parameters, validating after each epoch.
/// The model ends up holding the weights of the best validation-F1 epoch.
TrainResult train(ChangeDetector& model, const std::vector<ChangeSample>& train_set,
                  const std::vector<ChangeSample>& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
/// Splits `dataset` into train/val with config.val_split and config.seed first.
TrainResult train(ChangeDetector& model, const std::vector<ChangeSample>& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Micro-averaged metrics over every pixel of every sample; builds no graph.
MetricReport evaluate(const ChangeDetector& model, const std::vector<ChangeSample>& dataset, std::size_t threads = 0);
Mask predict(const ChangeDetector& model, const ChangeSample& sample);

/// Loss and trainable-parameter gradients for one sample.
struct SampleGradient {
    double loss = 0.0;
    GradientSet grads;
};
SampleGradient sample_gradient(const ChangeDetector& model, const ChangeSample& sample,
                               const FocalJaccardOptions& loss_options = {});

}  // namespace pvcd
