#pragma once

#include <cstdint>

#include "pvcd/layers.hpp"

namespace pvcd {

/// Masked cross-attention block fusing T per-frame feature sets.
struct McaParams {
    Parameter* temporal_pos = nullptr;  // [T, D], shared by all patches
    Parameter* mask_query = nullptr;    // [1, D], shared by all patches
    NormParams ln1, ln2, ln3;
    AttentionParams attn;
    MlpParams mlp;
    std::size_t frames = 2;
};

McaParams register_fusion(ParameterStore& store, std::size_t dim, std::size_t frames, std::size_t mlp_ratio,
                          std::uint64_t seed);

/// [T,N,D] -> [N,T,D].
Tensor temporal_stack(const Tensor& features);

/// One mask-query step per patch: z_m [N,1,D] attends over z_t [N,T,D]
/// (which already carries the temporal embedding). Single head, scale sqrt(D).
Tensor mca_block(Graph& g, const Tensor& mask_query, const Tensor& temporal, const McaParams& params);

/// [T,N,D] backbone features -> [D, grid_h, grid_w] change feature.
Tensor fuse(Graph& g, const Tensor& features, std::size_t grid_h, std::size_t grid_w, const McaParams& params);

}  // namespace pvcd
