#pragma once

#include <vector>

#include "pvcd/tensor.hpp"

namespace pvcd {

// Elementwise binary ops broadcast numpy-style over trailing-aligned dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// tanh-approximated GELU.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);

/// a[..., m, k] x b[..., k, n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] W[in, out] + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor expand(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);

Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);

/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// x[C,H,W], weight[Co,C,k,k], bias[Co]; stride 1, zero padding `pad`.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad);
/// Single-group normalization over a whole [C,H,W] map with per-channel affine.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
/// 2x bilinear upsampling of [C,h,w] with align_corners=false.
Tensor upsample_bilinear2x(const Tensor& x);

}  // namespace pvcd
