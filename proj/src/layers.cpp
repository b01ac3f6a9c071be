#include "pvcd/layers.hpp"

#include "pvcd/ops.hpp"

namespace pvcd {

namespace {
constexpr double kInitStd = 0.02;
}

LinearParams register_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                             std::uint64_t seed, bool frozen, const std::string& weight_name,
                             const std::string& bias_name) {
    LinearParams p;
    p.weight = &store.add(prefix + "." + weight_name, {in, out}, frozen);
    p.bias = &store.add(prefix + "." + bias_name, {out}, frozen);
    init_trunc_normal(*p.weight, kInitStd, parameter_seed(seed, p.weight->name()));
    init_constant(*p.bias, 0.0);
    return p;
}

NormParams register_norm(ParameterStore& store, const std::string& prefix, std::size_t dim, bool frozen) {
    NormParams p;
    p.gamma = &store.add(prefix + ".gamma", {dim}, frozen);
    p.beta = &store.add(prefix + ".beta", {dim}, frozen);
    init_constant(*p.gamma, 1.0);
    init_constant(*p.beta, 0.0);
    return p;
}

MlpParams register_mlp(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden,
                       std::uint64_t seed, bool frozen) {
    return {register_linear(store, prefix, dim, hidden, seed, frozen, "w1", "b1"),
            register_linear(store, prefix, hidden, dim, seed, frozen, "w2", "b2")};
}

Tensor apply_linear(Graph& g, const LinearParams& p, const Tensor& x) {
    return linear(x, g.use(*p.weight), p.bias ? g.use(*p.bias) : Tensor());
}

Tensor apply_norm(Graph& g, const NormParams& p, const Tensor& x) {
    return layer_norm(x, g.use(*p.gamma), g.use(*p.beta), 1e-6);
}

}  // namespace pvcd
