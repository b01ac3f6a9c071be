#include "pvcd/peft.hpp"

#include <cmath>
#include <stdexcept>

#include "pvcd/ops.hpp"

namespace pvcd {

std::string_view to_string(PeftMethod method) {
    switch (method) {
        case PeftMethod::adapter: return "adapter";
        case PeftMethod::lora: return "lora";
        case PeftMethod::ia3: return "ia3";
        case PeftMethod::prefix: return "prefix";
        case PeftMethod::linear_probe: return "linear_probe";
        case PeftMethod::full: return "full";
    }
    return "?";
}

PeftMethod parse_peft_method(std::string_view name) {
    for (auto m : {PeftMethod::adapter, PeftMethod::lora, PeftMethod::ia3, PeftMethod::prefix,
                   PeftMethod::linear_probe, PeftMethod::full}) {
        if (name == to_string(m)) return m;
    }
    if (name == "linear-probe") return PeftMethod::linear_probe;
    throw std::invalid_argument("unknown PEFT method '" + std::string(name) +
                                "' (expected adapter, lora, ia3, prefix, linear_probe or full)");
}

void PeftConfig::validate() const {
    if (r < 1) throw std::invalid_argument("adapter factor r must be >= 1");
    if (!std::isfinite(s)) throw std::invalid_argument("adapter scale s must be finite");
    if (rank < 1) throw std::invalid_argument("LoRA rank must be >= 1");
    if (prefix_count < 1) throw std::invalid_argument("prefix token count must be >= 1");
    if (method == PeftMethod::lora && lora_targets.empty()) throw std::invalid_argument("LoRA needs a target");
    if (method == PeftMethod::ia3 && ia3_targets.empty()) throw std::invalid_argument("IA3 needs a target");
}

std::size_t PeftConfig::bottleneck(std::size_t dim) const {
    const auto d = static_cast<std::size_t>(std::lround(static_cast<double>(dim) / static_cast<double>(r)));
    return d == 0 ? 1 : d;
}

namespace {

const char* projection_name(Projection p) {
    switch (p) {
        case Projection::q: return "q";
        case Projection::k: return "k";
        case Projection::v: return "v";
        case Projection::o: return "o";
    }
    return "?";
}

Parameter* ones(ParameterStore& store, const std::string& name, std::size_t n) {
    Parameter& p = store.add(name, {n});
    init_constant(p, 1.0);
    return &p;
}

}  // namespace

std::vector<LayerPeft> register_peft(ParameterStore& store, const ViTConfig& vit, const PeftConfig& cfg,
                                     std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = vit.dim;
    std::vector<LayerPeft> hooks(vit.depth);
    for (std::size_t l = 0; l < vit.depth; ++l) {
        const std::string base = "peft.layer" + std::to_string(l);
        LayerPeft& h = hooks[l];
        switch (cfg.method) {
            case PeftMethod::adapter: {
                const std::size_t bottleneck = cfg.bottleneck(d);
                AdapterParams a;
                a.down = register_linear(store, base + ".adapter", d, bottleneck, seed, false, "w_down", "b_down");
                a.up = register_linear(store, base + ".adapter", bottleneck, d, seed, false, "w_up", "b_up");
                init_constant(*a.up.weight, 0.0);
                a.scale = cfg.s;
                h.adapter = a;
                break;
            }
            case PeftMethod::lora:
                for (Projection p : cfg.lora_targets) {
                    const std::string name = base + ".lora." + projection_name(p);
                    LoraParams lp;
                    lp.a = &store.add(name + ".a", {d, cfg.rank});
                    init_normal(*lp.a, 0.02, parameter_seed(seed, lp.a->name()));
                    lp.b = &store.add(name + ".b", {cfg.rank, d});
                    init_constant(*lp.b, 0.0);
                    h.lora[static_cast<std::size_t>(p)] = lp;
                }
                break;
            case PeftMethod::ia3: {
                Ia3Params ia;
                if (cfg.ia3_targets.contains(Ia3Target::k)) ia.l_k = ones(store, base + ".ia3.l_k", d);
                if (cfg.ia3_targets.contains(Ia3Target::v)) ia.l_v = ones(store, base + ".ia3.l_v", d);
                if (cfg.ia3_targets.contains(Ia3Target::mlp)) {
                    ia.l_mlp = ones(store, base + ".ia3.l_mlp", vit.mlp_ratio * d);
                }
                h.ia3 = ia;
                break;
            }
            case PeftMethod::prefix: {
                PrefixParams pp;
                pp.tokens = &store.add(base + ".prefix.tokens", {cfg.prefix_count, d});
                init_trunc_normal(*pp.tokens, 0.02, parameter_seed(seed, pp.tokens->name()));
                h.prefix = pp;
                break;
            }
            case PeftMethod::linear_probe:
            case PeftMethod::full: break;
        }
    }
    return hooks;
}

Tensor adapter_branch(Graph& g, const AdapterParams& adapter, const Tensor& z) {
    Tensor hidden = gelu(apply_linear(g, adapter.down, z));
    return scale(apply_linear(g, adapter.up, hidden), adapter.scale);
}

Tensor adapter_forward(Graph& g, const Tensor& z, const NormParams& ln, const MlpParams& mlp,
                       const AdapterParams& adapter, const Ia3Params* ia3) {
    Tensor hidden = gelu(apply_linear(g, mlp.fc1, apply_norm(g, ln, z)));
    if (ia3) hidden = ia3_scale(g, hidden, ia3->l_mlp);
    Tensor plain = add(z, apply_linear(g, mlp.fc2, hidden));
    return add(plain, adapter_branch(g, adapter, z));
}

Tensor lora_forward(Graph& g, const Tensor& x, const LinearParams& base, const LoraParams& lora) {
    Tensor low_rank = matmul(matmul(x, g.use(*lora.a)), g.use(*lora.b));
    return add(apply_linear(g, base, x), low_rank);
}

Tensor ia3_scale(Graph& g, const Tensor& activations, const Parameter* vector) {
    if (!vector) return activations;
    return mul(activations, g.use(*vector));
}

Tensor prefix_inject(Graph& g, const Tensor& z, const PrefixParams& prefix) {
    return concat({g.use(*prefix.tokens), z}, 0);
}

Tensor prefix_strip(const Tensor& z, const PrefixParams& prefix) {
    const std::size_t count = prefix.tokens->shape()[0];
    return slice(z, 0, count, z.dim(0) - count);
}

void merge_lora(std::vector<LayerPeft>& peft, std::vector<TransformerLayerParams>& layers) {
    if (peft.size() != layers.size()) throw std::invalid_argument("merge_lora: hook count != layer count");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (auto p : {Projection::q, Projection::k, Projection::v, Projection::o}) {
            const auto& lora = peft[l].lora_for(p);
            if (!lora) continue;
            Parameter& w = *layers[l].attn[p].weight;
            const std::size_t rows = w.shape()[0], cols = w.shape()[1], rank = lora->a->shape()[1];
            const auto a = lora->a->values();
            auto b = lora->b->values();
            auto wv = w.values();
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    double delta = 0.0;
                    for (std::size_t r = 0; r < rank; ++r) delta += a[i * rank + r] * b[r * cols + j];
                    wv[i * cols + j] += delta;
                }
            }
            std::fill(b.begin(), b.end(), 0.0);
        }
    }
}

}  // namespace pvcd
