#pragma once

#include <cstdint>
#include <vector>

#include "pvcd/decoder.hpp"
#include "pvcd/fusion.hpp"
#include "pvcd/peft.hpp"
#include "pvcd/vit.hpp"

namespace pvcd {

struct ModelConfig {
    ViTConfig vit = ViTConfig::tiny(64);
    PeftConfig peft;
    std::size_t frames = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Frozen (or fully tuned) ViT backbone + PEFT hooks + MCA fusion + decoder.
class ChangeDetector {
public:
    explicit ChangeDetector(ModelConfig cfg);

    ChangeDetector(ChangeDetector&&) noexcept = default;
    ChangeDetector& operator=(ChangeDetector&&) noexcept = default;
    ChangeDetector(const ChangeDetector&) = delete;
    ChangeDetector& operator=(const ChangeDetector&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }
    const BackboneParams& backbone() const { return backbone_; }
    const std::vector<LayerPeft>& peft() const { return peft_; }
    const McaParams& fusion() const { return fusion_; }
    const DecoderParams& decoder() const { return decoder_; }

    /// [T,3,H,W] -> [T,N,D]
    Tensor features(Graph& g, const Tensor& frames) const;
    /// [T,3,H,W] -> [D, H/P, W/P]
    Tensor change_feature(Graph& g, const Tensor& frames) const;
    /// [T,3,H,W] -> [2,H,W] logits (unchanged, changed).
    Tensor forward(Graph& g, const Tensor& frames) const;

    /// Folds LoRA updates into the backbone projections (deployment form).
    void merge_lora();

private:
    ModelConfig config_;
    ParameterStore store_;
    BackboneParams backbone_;
    std::vector<LayerPeft> peft_;
    McaParams fusion_;
    DecoderParams decoder_;
};

ChangeDetector build_model(const ViTConfig& vit, const PeftConfig& peft, std::size_t frames = 2,
                           std::uint64_t seed = 0);

struct PartitionReport {
    std::size_t frozen_count = 0;
    std::size_t trainable_count = 0;
    double ratio = 0.0;  // trainable / total
};

PartitionReport partition_report(const ParameterStore& store);
inline PartitionReport partition_report(const ChangeDetector& model) { return partition_report(model.parameters()); }

/// Stacks equally sized [3,H,W] frames into [T,3,H,W].
Tensor stack_frames(const std::vector<Tensor>& frames);

}  // namespace pvcd
