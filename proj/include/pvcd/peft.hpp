#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pvcd/layers.hpp"
#include "pvcd/vit.hpp"

namespace pvcd {

enum class PeftMethod { adapter, lora, ia3, prefix, linear_probe, full };

std::string_view to_string(PeftMethod method);
/// Throws std::invalid_argument for unknown names.
PeftMethod parse_peft_method(std::string_view name);

enum class Ia3Target { k, v, mlp };

struct PeftConfig {
    PeftMethod method = PeftMethod::adapter;
    // adapter
    std::size_t r = 6;     // D / bottleneck
    double s = 1.0;        // branch scale
    // lora
    std::size_t rank = 1;
    std::set<Projection> lora_targets{Projection::q, Projection::k, Projection::v, Projection::o};
    // ia3
    std::set<Ia3Target> ia3_targets{Ia3Target::k, Ia3Target::v, Ia3Target::mlp};
    // prefix
    std::size_t prefix_count = 10;

    void validate() const;
    /// round(D / r)
    std::size_t bottleneck(std::size_t dim) const;
};

/// Registers `peft.layer{i}.*` parameters for the configured method and
/// returns one hook bundle per backbone layer (empty bundles for
/// linear_probe and full).
std::vector<LayerPeft> register_peft(ParameterStore& store, const ViTConfig& vit, const PeftConfig& cfg,
                                     std::uint64_t seed);

/// s * W_up(GELU(W_down(z))).
Tensor adapter_branch(Graph& g, const AdapterParams& adapter, const Tensor& z);

/// z + MLP(LN(z)) + s * W_up(GELU(W_down(z))); the adapter reads the same z as the MLP.
Tensor adapter_forward(Graph& g, const Tensor& z, const NormParams& ln, const MlpParams& mlp,
                       const AdapterParams& adapter, const Ia3Params* ia3 = nullptr);

/// xW + b + (xA)B.
Tensor lora_forward(Graph& g, const Tensor& x, const LinearParams& base, const LoraParams& lora);

/// Elementwise rescaling by a learned vector broadcast over rows.
Tensor ia3_scale(Graph& g, const Tensor& activations, const Parameter* vector);

/// Prepends the layer's learned tokens: [M,D] -> [count+M, D].
Tensor prefix_inject(Graph& g, const Tensor& z, const PrefixParams& prefix);
/// Drops the first `count` rows again.
Tensor prefix_strip(const Tensor& z, const PrefixParams& prefix);

/// Folds every LoRA update into its base weight (W += A B) and zeroes B.
void merge_lora(std::vector<LayerPeft>& peft, std::vector<TransformerLayerParams>& layers);

}  // namespace pvcd
