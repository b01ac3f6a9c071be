#include "pvcd/fusion.hpp"

#include <cmath>
#include <string>

#include "pvcd/ops.hpp"

namespace pvcd {

McaParams register_fusion(ParameterStore& store, std::size_t dim, std::size_t frames, std::size_t mlp_ratio,
                          std::uint64_t seed) {
    if (frames == 0) throw std::invalid_argument("fusion needs at least one frame");
    McaParams p;
    p.frames = frames;
    p.temporal_pos = &store.add("fusion.temporal_pos", {frames, dim});
    init_trunc_normal(*p.temporal_pos, 0.02, parameter_seed(seed, p.temporal_pos->name()));
    p.mask_query = &store.add("fusion.mask_query", {1, dim});
    init_trunc_normal(*p.mask_query, 0.02, parameter_seed(seed, p.mask_query->name()));
    p.ln1 = register_norm(store, "fusion.ln1", dim);
    p.ln2 = register_norm(store, "fusion.ln2", dim);
    p.ln3 = register_norm(store, "fusion.ln3", dim);
    p.attn[Projection::q] = register_linear(store, "fusion.attn", dim, dim, seed, false, "wq", "bq");
    p.attn[Projection::k] = register_linear(store, "fusion.attn", dim, dim, seed, false, "wk", "bk");
    p.attn[Projection::v] = register_linear(store, "fusion.attn", dim, dim, seed, false, "wv", "bv");
    p.attn[Projection::o] = register_linear(store, "fusion.attn", dim, dim, seed, false, "wo", "bo");
    p.mlp = register_mlp(store, "fusion.mlp", dim, mlp_ratio * dim, seed);
    return p;
}

Tensor temporal_stack(const Tensor& features) {
    if (features.rank() != 3) throw ShapeError("temporal_stack expects [T,N,D], got " + shape_str(features.shape()));
    return permute(features, {1, 0, 2});
}

Tensor mca_block(Graph& g, const Tensor& mask_query, const Tensor& temporal, const McaParams& params) {
    const std::size_t d = temporal.dim(-1);
    // Both inputs are normalized in place before the cross-attention; the
    // residual then builds on the normalized query.
    Tensor zt = apply_norm(g, params.ln1, temporal);
    Tensor zm = apply_norm(g, params.ln2, mask_query);
    Tensor q = apply_linear(g, params.attn[Projection::q], zm);
    Tensor k = apply_linear(g, params.attn[Projection::k], zt);
    Tensor v = apply_linear(g, params.attn[Projection::v], zt);
    Tensor scores = scale(matmul(q, transpose(k, -2, -1)), 1.0 / std::sqrt(static_cast<double>(d)));  // [N,1,T]
    Tensor weights = softmax(scores, -1);
    g.record_attention("fusion", weights);
    zm = add(zm, apply_linear(g, params.attn[Projection::o], matmul(weights, v)));
    Tensor hidden = gelu(apply_linear(g, params.mlp.fc1, apply_norm(g, params.ln3, zm)));
    return add(zm, apply_linear(g, params.mlp.fc2, hidden));
}

Tensor fuse(Graph& g, const Tensor& features, std::size_t grid_h, std::size_t grid_w, const McaParams& params) {
    if (features.rank() != 3) throw ShapeError("fuse expects [T,N,D], got " + shape_str(features.shape()));
    const std::size_t frames = features.dim(0), n = features.dim(1), d = features.dim(2);
    if (n != grid_h * grid_w) {
        throw ShapeError("fuse: " + std::to_string(n) + " patches do not fill a " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w) + " grid");
    }
    if (frames != params.frames) {
        throw ShapeError("fuse: got " + std::to_string(frames) + " frames, temporal embedding has " +
                         std::to_string(params.frames));
    }
    Tensor zt = add(temporal_stack(features), g.use(*params.temporal_pos));
    Tensor zm = expand(reshape(g.use(*params.mask_query), {1, 1, d}), {n, 1, d});
    Tensor fused = reshape(mca_block(g, zm, zt, params), {n, d});
    return reshape(transpose(fused, 0, 1), {d, grid_h, grid_w});
}

}  // namespace pvcd
