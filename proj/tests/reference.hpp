#pragma once

// Plain-loop reference implementations used as test oracles. They work on
// single row vectors and read parameter values directly, sharing no code
// with the library's tensor ops.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "pvcd/layers.hpp"

namespace pvcd::ref {

using Vec = std::vector<double>;

inline Vec linear(const Vec& x, const LinearParams& p) {
    const auto w = p.weight->values();
    const std::size_t in = p.weight->shape()[0], out = p.weight->shape()[1];
    Vec y(out);
    for (std::size_t j = 0; j < out; ++j) {
        double acc = p.bias->values()[j];
        for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i * out + j];
        y[j] = acc;
    }
    return y;
}

inline Vec layer_norm(const Vec& x, const NormParams& p, double eps = 1e-6) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = (x[i] - mean) / std::sqrt(var + eps) * p.gamma->values()[i] + p.beta->values()[i];
    }
    return y;
}

inline Vec gelu(Vec x) {
    for (double& v : x) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (v + 0.044715 * v * v * v)));
    return x;
}

inline Vec add(Vec a, const Vec& b, double scale = 1.0) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    return a;
}

inline Vec mlp(const Vec& x, const MlpParams& p) { return linear(gelu(linear(x, p.fc1)), p.fc2); }

/// Overwrites every value of `p` with draws from U(-amp, amp).
inline void randomize(Parameter& p, std::mt19937_64& rng, double amp = 0.5) {
    std::uniform_real_distribution<double> u(-amp, amp);
    for (double& v : p.values()) v = u(rng);
}

}  // namespace pvcd::ref
