#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "pvcd/layers.hpp"

namespace pvcd {

struct ViTConfig {
    std::size_t image_size = 224;  // H = W
    std::size_t patch_size = 16;
    std::size_t depth = 12;
    std::size_t dim = 384;
    std::size_t heads = 6;
    std::size_t mlp_ratio = 4;

    /// Throws std::invalid_argument on an inconsistent configuration.
    void validate() const;
    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t patch_features() const { return 3 * patch_size * patch_size; }

    /// ViT-Small: D=384, L=12, 6 heads, P=16.
    static ViTConfig small(std::size_t image_size = 224);
    /// Desk-scale: D=32, L=2, 2 heads, P=8.
    static ViTConfig tiny(std::size_t image_size = 32);
};

struct TransformerLayerParams {
    NormParams ln1;
    AttentionParams attn;
    NormParams ln2;
    MlpParams mlp;
};

struct BackboneParams {
    LinearParams patch_embed;  // [3P^2, D]
    Parameter* cls_token = nullptr;  // [1, D]
    Parameter* pos_embed = nullptr;  // [N+1, D]
    std::vector<TransformerLayerParams> layers;
};

/// Registers all `backbone.*` parameters with random initialization.
BackboneParams register_backbone(ParameterStore& store, const ViTConfig& cfg, std::uint64_t seed);

/// [3,H,W] -> [N, 3P^2]; patches in row-major grid order, each flattened as (py, px, channel).
Tensor patchify(const Tensor& image, std::size_t patch_size);

/// Patch embedding, class token and position embedding: [N, 3P^2] -> [N+1, D].
Tensor embed(Graph& g, const Tensor& patches, const BackboneParams& params);

/// Multi-head scaled dot-product self-attention including the output projection.
/// LoRA and IA3 hooks on the projections are honoured when `peft` carries them.
Tensor attention(Graph& g, const Tensor& z, const AttentionParams& params, std::size_t heads,
                 const LayerPeft* peft = nullptr, std::string_view site = "attn");

/// Pre-norm block: z + MSA(LN1(z)), then the MLP half (with adapter branch if hooked).
Tensor transformer_layer(Graph& g, const Tensor& z, const TransformerLayerParams& params, std::size_t heads,
                         const LayerPeft* peft = nullptr, std::string_view site = "layer");

/// [T,3,H,W] -> [T,N,D]. Every frame runs through the same weights and the
/// class token is dropped from the output.
Tensor backbone_forward(Graph& g, const Tensor& images, const BackboneParams& params, const ViTConfig& cfg,
                        const std::vector<LayerPeft>* peft = nullptr);

}  // namespace pvcd
