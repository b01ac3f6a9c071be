#include "pvcd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pvcd {

AdamWState AdamWState::for_trainable(const ParameterStore& store) {
    AdamWState state;
    for (const Parameter* p : store.trainable()) {
        state.moments[p->name()] = {std::vector<double>(p->numel(), 0.0), std::vector<double>(p->numel(), 0.0)};
    }
    return state;
}

void adamw_step(const std::vector<Parameter*>& params, const GradientSet& grads, AdamWState& state,
                const AdamWConfig& config) {
    std::size_t trainable = 0;
    for (const Parameter* p : params) {
        if (p->frozen()) {
            if (grads.contains(p->name())) throw std::invalid_argument("gradient supplied for frozen " + p->name());
            continue;
        }
        ++trainable;
        if (!grads.contains(p->name())) throw std::invalid_argument("missing gradient for " + p->name());
        if (!state.moments.contains(p->name())) throw std::invalid_argument("no optimizer state for " + p->name());
        if (grads.at(p->name()).size() != p->numel()) throw std::invalid_argument("gradient size mismatch for " + p->name());
    }
    if (trainable != grads.size() || trainable != state.moments.size()) {
        throw std::invalid_argument("optimizer state / gradient set does not match the trainable parameters");
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (Parameter* p : params) {
        if (p->frozen()) continue;
        const auto& g = grads.at(p->name());
        auto& [m, v] = state.moments.at(p->name());
        auto theta = p->values();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double x = theta[i] * (1.0 - config.lr * config.weight_decay);
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            x -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
            theta[i] = to_storage(x);
        }
    }
}

}  // namespace pvcd
