#include "pvcd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "pvcd/parallel.hpp"

namespace pvcd {

void TrainConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
    if (epochs == 0) throw std::invalid_argument("train.epochs must be positive");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("train.lr and weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train.betas must lie in [0,1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("train.eps must be positive");
    if (!(val_split > 0.0 && val_split < 1.0)) throw std::invalid_argument("train.val_split must lie in (0,1)");
}

std::string EpochRecord::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["train_loss"] = train_loss;
    j["val_f1"] = val_f1;
    j["val_iou"] = val_iou;
    j["val_oa"] = val_oa;
    return j.dump();
}

namespace {

Tensor frames_of(const ChangeSample& s) { return stack_frames({s.image_a, s.image_b}); }

std::mt19937_64 augment_rng(std::uint64_t seed, std::size_t epoch, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index), 0xa5u};
    return std::mt19937_64(seq);
}

ChangeSample training_view(const ChangeSample& s, const TrainConfig& cfg, std::size_t crop, std::size_t epoch,
                           std::size_t index) {
    auto rng = augment_rng(cfg.seed, epoch, index);
    AugmentDecision d = draw_augment(s.height(), s.width(), crop, rng);
    if (!cfg.flips) d.hflip = d.vflip = false;
    return apply_augment(s, d);
}

}  // namespace

SampleGradient sample_gradient(const ChangeDetector& model, const ChangeSample& sample,
                               const FocalJaccardOptions& loss_options) {
    Graph g;
    Tensor loss = focal_jaccard_loss(model.forward(g, frames_of(sample)), sample.mask, loss_options);
    loss.backward();
    SampleGradient out;
    out.loss = loss.item();
    for (const Parameter* p : model.parameters().trainable()) {
        const auto grad = g.grad(*p);
        auto& dst = out.grads[p->name()];
        if (grad.empty()) {
            dst.assign(p->numel(), 0.0);
        } else {
            dst.assign(grad.begin(), grad.end());
        }
    }
    return out;
}

TrainResult train(ChangeDetector& model, const std::vector<ChangeSample>& train_set,
                  const std::vector<ChangeSample>& val_set, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.empty()) throw TrainingError("training set is empty");
    if (val_set.empty()) throw TrainingError("validation set is empty");

    ParameterStore& store = model.parameters();
    const std::vector<Parameter*> params = store.all();
    AdamWState state = AdamWState::for_trainable(store);
    const AdamWConfig opt = config.optimizer();
    std::mt19937_64 shuffle_rng(config.seed);
    const std::size_t crop = config.crop_size == 0 ? model.config().vit.image_size : config.crop_size;

    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            std::vector<SampleGradient> per_sample(count);
            parallel_for(count, config.threads, [&](std::size_t i) {
                const std::size_t idx = order[start + i];
                per_sample[i] = sample_gradient(model, training_view(train_set[idx], config, crop, epoch, idx));
            });

            GradientSet batch;
            for (std::size_t i = 0; i < count; ++i) {
                if (!std::isfinite(per_sample[i].loss)) {
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on sample " +
                                        train_set[order[start + i]].id);
                }
                loss_sum += per_sample[i].loss;
                for (auto& [name, g] : per_sample[i].grads) {
                    auto& acc = batch[name];
                    if (acc.empty()) {
                        acc = std::move(g);
                    } else {
                        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
                    }
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (auto& [name, g] : batch) {
                for (double& v : g) v *= inv;
            }
            adamw_step(params, batch, state, opt);
        }

        const MetricReport val = evaluate(model, val_set, config.threads);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()), val.f1, val.iou, val.oa};
        result.log.push_back(rec);
        if (result.best_epoch == 0 || val.f1 > result.best_val.f1) {
            result.best_epoch = epoch;
            result.best_val = val;
            result.best_checkpoint = export_trainable(store);
        }
        if (on_epoch) on_epoch(rec);
    }
    load_checkpoint(result.best_checkpoint, store);
    return result;
}

TrainResult train(ChangeDetector& model, const std::vector<ChangeSample>& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.empty()) throw TrainingError("dataset is empty");
    std::unordered_map<std::string, const ChangeSample*> by_id;
    std::vector<std::string> ids;
    for (const auto& s : dataset) {
        if (!by_id.emplace(s.id, &s).second) throw TrainingError("duplicate sample id " + s.id);
        ids.push_back(s.id);
    }
    const SplitResult split = split_dataset(ids, config.val_split, config.seed);
    std::vector<ChangeSample> train_set, val_set;
    for (const auto& id : split.train) train_set.push_back(*by_id.at(id));
    for (const auto& id : split.val) val_set.push_back(*by_id.at(id));
    return train(model, train_set, val_set, config, on_epoch);
}

Mask predict(const ChangeDetector& model, const ChangeSample& sample) {
    NoGradGuard no_grad;
    Graph g;
    return predict_mask(model.forward(g, frames_of(sample)));
}

MetricReport evaluate(const ChangeDetector& model, const std::vector<ChangeSample>& dataset, std::size_t threads) {
    if (dataset.empty()) throw TrainingError("evaluation set is empty");
    std::vector<MetricReport> per_sample(dataset.size());
    parallel_for(dataset.size(), threads,
                 [&](std::size_t i) { per_sample[i] = compute_metrics(predict(model, dataset[i]), dataset[i].mask); });
    MetricReport total;
    for (const auto& r : per_sample) total += r;
    return total;
}

}  // namespace pvcd
