#pragma once

#include <cstdint>
#include <vector>

namespace pvcd {

/// Binary per-pixel mask, row-major, values in {0,1}.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    std::size_t count() const;
    bool is_binary() const;
    bool operator==(const Mask&) const = default;
};

/// Confusion counts with "changed" (1) as the positive class, plus the
/// scores derived from them.
struct MetricReport {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double f1 = 0.0, iou = 0.0, oa = 0.0;

    /// F1 = 2tp/(2tp+fp+fn), IoU = tp/(tp+fp+fn), OA = (tp+tn)/total.
    /// With no positives in prediction or truth, F1 and IoU are 1.
    static MetricReport from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn);
    MetricReport& operator+=(const MetricReport& other);
    bool operator==(const MetricReport&) const = default;
};

MetricReport compute_metrics(const Mask& pred, const Mask& gt);

}  // namespace pvcd
