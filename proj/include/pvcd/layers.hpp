#pragma once

#include <array>
#include <optional>
#include <string>

#include "pvcd/parameter.hpp"

namespace pvcd {

struct LinearParams {
    Parameter* weight = nullptr;  // [in, out]
    Parameter* bias = nullptr;    // [out]
};

struct NormParams {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
};

struct MlpParams {
    LinearParams fc1;  // [D, mlp_ratio*D]
    LinearParams fc2;  // [mlp_ratio*D, D]
};

enum class Projection { q = 0, k = 1, v = 2, o = 3 };

struct AttentionParams {
    std::array<LinearParams, 4> proj;  // indexed by Projection
    const LinearParams& operator[](Projection p) const { return proj[static_cast<std::size_t>(p)]; }
    LinearParams& operator[](Projection p) { return proj[static_cast<std::size_t>(p)]; }
};

/// Registers `prefix.weight` [in,out] (truncated normal) and `prefix.bias` (zeros).
LinearParams register_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                             std::uint64_t seed, bool frozen = false, const std::string& weight_name = "weight",
                             const std::string& bias_name = "bias");
NormParams register_norm(ParameterStore& store, const std::string& prefix, std::size_t dim, bool frozen = false);
MlpParams register_mlp(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden,
                       std::uint64_t seed, bool frozen = false);

Tensor apply_linear(Graph& g, const LinearParams& p, const Tensor& x);
Tensor apply_norm(Graph& g, const NormParams& p, const Tensor& x);

// -- parameter-efficient tuning hooks attached to one transformer layer -----

struct AdapterParams {
    LinearParams down;  // [D, D']
    LinearParams up;    // [D', D], zero-initialized
    double scale = 1.0;
};

struct LoraParams {
    Parameter* a = nullptr;  // [d, rank], Gaussian
    Parameter* b = nullptr;  // [rank, k], zeros
};

struct Ia3Params {
    Parameter* l_k = nullptr;    // [D]
    Parameter* l_v = nullptr;    // [D]
    Parameter* l_mlp = nullptr;  // [mlp_ratio*D]
};

struct PrefixParams {
    Parameter* tokens = nullptr;  // [count, D]
};

struct LayerPeft {
    std::optional<AdapterParams> adapter;
    std::array<std::optional<LoraParams>, 4> lora;  // indexed by Projection
    std::optional<Ia3Params> ia3;
    std::optional<PrefixParams> prefix;

    const std::optional<LoraParams>& lora_for(Projection p) const { return lora[static_cast<std::size_t>(p)]; }
};

}  // namespace pvcd
