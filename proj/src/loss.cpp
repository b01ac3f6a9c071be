#include "pvcd/loss.hpp"

#include <cmath>
#include <stdexcept>

#include "pvcd/ops.hpp"

namespace pvcd {

Tensor focal_jaccard_loss(const Tensor& logits, const Mask& target, const FocalJaccardOptions& options) {
    if (logits.rank() != 3 || logits.dim(0) != 2 || logits.dim(1) != target.height || logits.dim(2) != target.width) {
        throw ShapeError("loss: logits " + shape_str(logits.shape()) + " do not match a " +
                         std::to_string(target.height) + "x" + std::to_string(target.width) + " target");
    }
    if (!target.is_binary()) throw std::invalid_argument("loss: target mask is not binary");
    const std::size_t h = target.height, w = target.width, n = h * w;

    std::vector<double> onehot(2 * n), alpha(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool changed = target.data[i] != 0;
        onehot[i] = changed ? 0.0 : 1.0;
        onehot[n + i] = changed ? 1.0 : 0.0;
        alpha[i] = changed ? options.alpha : 1.0 - options.alpha;
        y[i] = changed ? 1.0 : 0.0;
    }
    const Tensor onehot_t = Tensor::from({2, h, w}, std::move(onehot));
    const Tensor alpha_t = Tensor::from({h, w}, std::move(alpha));
    const Tensor y_t = Tensor::from({h, w}, std::move(y));

    Tensor log_p = log_softmax(logits, 0);
    Tensor log_pt = sum(mul(log_p, onehot_t), 0);  // [H,W]
    Tensor one_minus_pt = add_scalar(neg(exp(log_pt)), 1.0);
    Tensor modulating = one_minus_pt;
    if (options.gamma == 2.0) {
        modulating = mul(one_minus_pt, one_minus_pt);
    } else {
        modulating = exp(scale(log(add_scalar(one_minus_pt, 1e-300)), options.gamma));
    }
    Tensor focal = neg(mean(mul(mul(alpha_t, modulating), log_pt)));

    Tensor p_changed = exp(reshape(slice(log_p, 0, 1, 1), {h, w}));
    Tensor intersection = sum(mul(p_changed, y_t));
    Tensor denominator =
        add_scalar(sub(sum(p_changed), intersection), static_cast<double>(target.count()) + options.eps);
    Tensor jaccard = add_scalar(neg(div(add_scalar(intersection, options.eps), denominator)), 1.0);
    return add(focal, jaccard);
}

Mask predict_mask(const Tensor& logits) {
    if (logits.rank() != 3 || logits.dim(0) != 2) throw ShapeError("predict_mask expects [2,H,W] logits");
    const std::size_t h = logits.dim(1), w = logits.dim(2), n = h * w;
    Mask m(h, w);
    const auto v = logits.data();
    for (std::size_t i = 0; i < n; ++i) m.data[i] = v[n + i] > v[i] ? 1 : 0;
    return m;
}

}  // namespace pvcd
