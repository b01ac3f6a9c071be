#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pvcd/tensor.hpp"

namespace pvcd {

using ScalarFunction = std::function<Tensor(const std::vector<Tensor>&)>;

/// Max over all input coordinates of
///   |analytic - central_fd| / max(1, |analytic|, |central_fd|).
/// `inputs` must be leaves; they are re-created with gradient tracking on,
/// perturbed in place for the finite differences, and restored afterwards.
/// `max_coords` > 0 limits each input to that many evenly spaced coordinates.
double grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double eps = 1e-5,
                  std::size_t max_coords = 0);

struct GradCheckCase {
    std::string name;
    double max_rel_error = 0.0;
};

/// Gradient checks for every differentiable op plus the model components and
/// the end-to-end model on the desk-scale config (D=32, L=2, 2 heads, P=8,
/// 32x32 frames) for each PEFT method.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace pvcd
