#pragma once

#include <map>
#include <string>
#include <vector>

#include "pvcd/parameter.hpp"

namespace pvcd {

struct AdamWConfig {
    double lr = 4e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Gradient per parameter name.
using GradientSet = std::map<std::string, std::vector<double>>;

struct AdamWState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments;  // trainable parameters only
    std::size_t step = 0;

    static AdamWState for_trainable(const ParameterStore& store);
};

/// One decoupled-weight-decay Adam step over `params`. Frozen parameters are
/// skipped; `grads` and `state` must cover exactly the trainable ones.
/// Updated values are rounded to parameter storage precision.
void adamw_step(const std::vector<Parameter*>& params, const GradientSet& grads, AdamWState& state,
                const AdamWConfig& config);

}  // namespace pvcd
