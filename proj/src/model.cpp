#include "pvcd/model.hpp"

#include "pvcd/ops.hpp"

namespace pvcd {

void ModelConfig::validate() const {
    vit.validate();
    peft.validate();
    if (frames == 0) throw std::invalid_argument("frame count must be >= 1");
    if ((vit.patch_size & (vit.patch_size - 1)) != 0) {
        throw std::invalid_argument("patch size must be a power of two for the decoder");
    }
}

ChangeDetector::ChangeDetector(ModelConfig cfg) : config_(std::move(cfg)) {
    config_.validate();
    const auto& vit = config_.vit;
    backbone_ = register_backbone(store_, vit, config_.seed);
    peft_ = register_peft(store_, vit, config_.peft, config_.seed);
    fusion_ = register_fusion(store_, vit.dim, config_.frames, vit.mlp_ratio, config_.seed);
    decoder_ = register_decoder(store_, vit.dim, vit.patch_size, config_.seed);
    store_.set_frozen_prefix("backbone.", config_.peft.method != PeftMethod::full);
}

Tensor ChangeDetector::features(Graph& g, const Tensor& frames) const {
    return backbone_forward(g, frames, backbone_, config_.vit, &peft_);
}

Tensor ChangeDetector::change_feature(Graph& g, const Tensor& frames) const {
    const std::size_t grid = config_.vit.grid();
    return fuse(g, features(g, frames), grid, grid, fusion_);
}

Tensor ChangeDetector::forward(Graph& g, const Tensor& frames) const {
    return decode(g, change_feature(g, frames), decoder_);
}

void ChangeDetector::merge_lora() { pvcd::merge_lora(peft_, backbone_.layers); }

ChangeDetector build_model(const ViTConfig& vit, const PeftConfig& peft, std::size_t frames, std::uint64_t seed) {
    return ChangeDetector(ModelConfig{vit, peft, frames, seed});
}

PartitionReport partition_report(const ParameterStore& store) {
    PartitionReport report;
    for (const Parameter* p : store.all()) {
        (p->frozen() ? report.frozen_count : report.trainable_count) += p->numel();
    }
    const std::size_t total = report.frozen_count + report.trainable_count;
    report.ratio = total == 0 ? 0.0 : static_cast<double>(report.trainable_count) / static_cast<double>(total);
    return report;
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
    if (frames.empty()) throw ShapeError("stack_frames: no frames");
    std::vector<Tensor> parts;
    for (const auto& f : frames) {
        if (f.rank() != 3 || f.shape() != frames[0].shape()) {
            throw ShapeError("stack_frames: frame " + shape_str(f.shape()) + " vs " + shape_str(frames[0].shape()));
        }
        Shape s = f.shape();
        s.insert(s.begin(), 1);
        parts.push_back(reshape(f, s));
    }
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

}  // namespace pvcd
