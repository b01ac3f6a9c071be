#include "pvcd/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace pvcd {

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

bool Mask::is_binary() const {
    return std::all_of(data.begin(), data.end(), [](std::uint8_t v) { return v <= 1; });
}

MetricReport MetricReport::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
    MetricReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.tn = tn;
    const auto d = [](std::uint64_t v) { return static_cast<double>(v); };
    const std::uint64_t union_count = tp + fp + fn;
    r.f1 = union_count == 0 ? 1.0 : 2.0 * d(tp) / (2.0 * d(tp) + d(fp) + d(fn));
    r.iou = union_count == 0 ? 1.0 : d(tp) / d(union_count);
    const std::uint64_t total = tp + fp + fn + tn;
    r.oa = total == 0 ? 1.0 : d(tp + tn) / d(total);
    return r;
}

MetricReport& MetricReport::operator+=(const MetricReport& other) {
    *this = from_counts(tp + other.tp, fp + other.fp, fn + other.fn, tn + other.tn);
    return *this;
}

MetricReport compute_metrics(const Mask& pred, const Mask& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument("mask shape mismatch: " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                                    std::to_string(gt.width));
    }
    if (!pred.is_binary() || !gt.is_binary()) throw std::invalid_argument("masks must be binary");
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, t = gt.data[i] != 0;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
        tn += !p && !t;
    }
    return MetricReport::from_counts(tp, fp, fn, tn);
}

}  // namespace pvcd
