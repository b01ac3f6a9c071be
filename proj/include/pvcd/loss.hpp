#pragma once

#include "pvcd/metrics.hpp"
#include "pvcd/tensor.hpp"

namespace pvcd {

struct FocalJaccardOptions {
    double gamma = 2.0;
    double alpha = 0.25;  // weight of the changed class; unchanged gets 1 - alpha
    double eps = 1e-7;    // soft-IoU smoothing
};

/// Focal loss (mean over pixels) plus soft-Jaccard loss on p(changed).
/// logits: [2,H,W] (unchanged, changed); target: binary [H,W].
Tensor focal_jaccard_loss(const Tensor& logits, const Mask& target, const FocalJaccardOptions& options = {});

/// p(changed) > 0.5, i.e. logit[1] > logit[0].
Mask predict_mask(const Tensor& logits);

}  // namespace pvcd
