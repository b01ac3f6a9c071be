#include "pvcd/vit.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pvcd/ops.hpp"
#include "pvcd/peft.hpp"

namespace pvcd {

void ViTConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || depth == 0 || dim == 0 || heads == 0 || mlp_ratio == 0) {
        throw std::invalid_argument("ViT config fields must be positive");
    }
    if (image_size % patch_size != 0) {
        throw std::invalid_argument("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                                    std::to_string(patch_size));
    }
    if (dim % heads != 0) {
        throw std::invalid_argument("dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                                    " heads");
    }
}

ViTConfig ViTConfig::small(std::size_t image_size) {
    return {.image_size = image_size, .patch_size = 16, .depth = 12, .dim = 384, .heads = 6, .mlp_ratio = 4};
}

ViTConfig ViTConfig::tiny(std::size_t image_size) {
    return {.image_size = image_size, .patch_size = 8, .depth = 2, .dim = 32, .heads = 2, .mlp_ratio = 4};
}

BackboneParams register_backbone(ParameterStore& store, const ViTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = cfg.dim;
    BackboneParams p;
    p.patch_embed = register_linear(store, "backbone.patch_embed", cfg.patch_features(), d, seed);
    p.cls_token = &store.add("backbone.cls_token", {1, d});
    init_trunc_normal(*p.cls_token, 0.02, parameter_seed(seed, p.cls_token->name()));
    p.pos_embed = &store.add("backbone.pos_embed", {cfg.num_patches() + 1, d});
    init_trunc_normal(*p.pos_embed, 0.02, parameter_seed(seed, p.pos_embed->name()));
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string base = "backbone.layer" + std::to_string(l);
        TransformerLayerParams layer;
        layer.ln1 = register_norm(store, base + ".ln1", d);
        layer.attn[Projection::q] = register_linear(store, base + ".attn", d, d, seed, false, "wq", "bq");
        layer.attn[Projection::k] = register_linear(store, base + ".attn", d, d, seed, false, "wk", "bk");
        layer.attn[Projection::v] = register_linear(store, base + ".attn", d, d, seed, false, "wv", "bv");
        layer.attn[Projection::o] = register_linear(store, base + ".attn", d, d, seed, false, "wo", "bo");
        layer.ln2 = register_norm(store, base + ".ln2", d);
        layer.mlp = register_mlp(store, base + ".mlp", d, cfg.mlp_ratio * d, seed);
        p.layers.push_back(layer);
    }
    return p;
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("patchify expects [3,H,W], got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2), p = patch_size;
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("image " + shape_str(image.shape()) + " is not divisible into " + std::to_string(p) + "x" +
                         std::to_string(p) + " patches");
    }
    const std::size_t gh = h / p, gw = w / p;
    Tensor blocks = reshape(image, {3, gh, p, gw, p});
    blocks = permute(blocks, {1, 3, 2, 4, 0});  // [gh, gw, py, px, c]
    return reshape(blocks, {gh * gw, 3 * p * p});
}

Tensor embed(Graph& g, const Tensor& patches, const BackboneParams& params) {
    const std::size_t n = patches.dim(0);
    if (params.pos_embed->shape()[0] != n + 1) {
        throw ShapeError("patch count " + std::to_string(n) + " does not match position embedding " +
                         shape_str(params.pos_embed->shape()));
    }
    Tensor tokens = apply_linear(g, params.patch_embed, patches);
    Tensor x0 = concat({g.use(*params.cls_token), tokens}, 0);
    return add(x0, g.use(*params.pos_embed));
}

namespace {

Tensor project(Graph& g, const Tensor& x, const AttentionParams& params, Projection which, const LayerPeft* peft) {
    if (peft && peft->lora_for(which)) return lora_forward(g, x, params[which], *peft->lora_for(which));
    return apply_linear(g, params[which], x);
}

}  // namespace

Tensor attention(Graph& g, const Tensor& z, const AttentionParams& params, std::size_t heads,
                 const LayerPeft* peft, std::string_view site) {
    const std::size_t m = z.dim(0), d = z.dim(1);
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: dim not divisible by heads");
    const std::size_t dh = d / heads;
    Tensor q = project(g, z, params, Projection::q, peft);
    Tensor k = project(g, z, params, Projection::k, peft);
    Tensor v = project(g, z, params, Projection::v, peft);
    if (peft && peft->ia3) {
        k = ia3_scale(g, k, peft->ia3->l_k);
        v = ia3_scale(g, v, peft->ia3->l_v);
    }
    Tensor qh = permute(reshape(q, {m, heads, dh}), {1, 0, 2});
    Tensor kt = permute(reshape(k, {m, heads, dh}), {1, 2, 0});
    Tensor vh = permute(reshape(v, {m, heads, dh}), {1, 0, 2});
    Tensor scores = scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor weights = softmax(scores, -1);
    g.record_attention(site, weights);
    Tensor mixed = reshape(permute(matmul(weights, vh), {1, 0, 2}), {m, d});
    return project(g, mixed, params, Projection::o, peft);
}

Tensor transformer_layer(Graph& g, const Tensor& z, const TransformerLayerParams& params, std::size_t heads,
                         const LayerPeft* peft, std::string_view site) {
    const bool has_prefix = peft && peft->prefix;
    Tensor x = has_prefix ? prefix_inject(g, z, *peft->prefix) : z;
    Tensor z1 = add(x, attention(g, apply_norm(g, params.ln1, x), params.attn, heads, peft, site));
    const Ia3Params* ia3 = peft && peft->ia3 ? &*peft->ia3 : nullptr;
    Tensor out;
    if (peft && peft->adapter) {
        out = adapter_forward(g, z1, params.ln2, params.mlp, *peft->adapter, ia3);
    } else {
        Tensor hidden = gelu(apply_linear(g, params.mlp.fc1, apply_norm(g, params.ln2, z1)));
        if (ia3) hidden = ia3_scale(g, hidden, ia3->l_mlp);
        out = add(z1, apply_linear(g, params.mlp.fc2, hidden));
    }
    return has_prefix ? prefix_strip(out, *peft->prefix) : out;
}

Tensor backbone_forward(Graph& g, const Tensor& images, const BackboneParams& params, const ViTConfig& cfg,
                        const std::vector<LayerPeft>* peft) {
    if (images.rank() != 4 || images.dim(1) != 3) {
        throw ShapeError("backbone expects [T,3,H,W], got " + shape_str(images.shape()));
    }
    if (images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size) {
        throw ShapeError("frame size " + shape_str(images.shape()) + " does not match configured image size " +
                         std::to_string(cfg.image_size));
    }
    if (peft && peft->size() != params.layers.size()) throw std::invalid_argument("PEFT hook count != depth");
    const std::size_t frames = images.dim(0), n = cfg.num_patches(), d = cfg.dim;
    std::vector<Tensor> outputs;
    for (std::size_t t = 0; t < frames; ++t) {
        Tensor frame = reshape(slice(images, 0, t, 1), {3, cfg.image_size, cfg.image_size});
        Tensor z = embed(g, patchify(frame, cfg.patch_size), params);
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
            const LayerPeft* hooks = peft ? &(*peft)[l] : nullptr;
            z = transformer_layer(g, z, params.layers[l], cfg.heads, hooks,
                                  "backbone.layer" + std::to_string(l));
        }
        outputs.push_back(reshape(slice(z, 0, 1, n), {1, n, d}));
    }
    return frames == 1 ? outputs[0] : concat(outputs, 0);
}

}  // namespace pvcd
