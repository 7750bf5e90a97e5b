#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "rnvkit/volume.hpp"

namespace rnvkit {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecallF1 {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Precision, recall and F1; any undefined ratio is reported as 0.
inline PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c)
{
    if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw ConfigError("confusion counts must be non-negative");
    PrecisionRecallF1 r;
    r.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    r.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

/// Pixel-level confusion counts of a predicted mask against truth.
template <class A, class B>
ConfusionCounts pixel_confusion(const Image2D<A>& pred, const Image2D<B>& truth)
{
    require_same_shape(pred, truth, "pixel_confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data()[i] != A{}, t = truth.data()[i] != B{};
        c.tp += p && t;
        c.fp += p && !t;
        c.fn += !p && t;
        c.tn += !p && !t;
    }
    return c;
}

/// |pred ∩ truth| / |pred ∪ truth|; two empty masks score 1.
template <class A, class B>
double iou(const Image2D<A>& pred, const Image2D<B>& truth)
{
    const auto c = pixel_confusion(pred, truth);
    const auto uni = c.tp + c.fp + c.fn;
    return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

inline double iou(const LesionMask& pred, const LesionMask& truth) { return iou(pred.mask, truth.mask); }

/// Exact Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie).
inline double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels)
{
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores/labels size mismatch");
    // Rank-sum form of the pairwise statistic; ties get their average rank.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::size_t n_pos = 0, n_neg = 0;
    for (bool l : labels) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_auc: need at least one positive and one negative");
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0, fpr = 0.0;
};

/// ROC operating points at every distinct score (predict positive iff score >= threshold).
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels)
{
    if (scores.size() != labels.size()) throw ShapeError("roc_curve: scores/labels size mismatch");
    std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
    std::size_t n_pos = 0, n_neg = 0;
    for (bool l : labels) (l ? n_pos : n_neg)++;
    std::vector<RocPoint> out;
    for (double t : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= t) (labels[i] ? tp : fp)++;
        out.push_back({t, n_pos ? double(tp) / double(n_pos) : 0.0, n_neg ? double(fp) / double(n_neg) : 0.0});
    }
    return out;
}

struct MeanStd {
    double mean = 0.0, std = 0.0;
    std::size_t count = 0;
};

/// Population mean and std.
inline MeanStd mean_std(const std::vector<double>& v)
{
    MeanStd r;
    r.count = v.size();
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(var / static_cast<double>(v.size()));
    return r;
}

/// Mean and population std of |z_pred - z_truth| in pixels, optionally
/// restricted to a set of B-scan indices.
inline MeanStd boundary_error(const VriSurface& pred, const VriSurface& truth,
                              const std::optional<std::vector<int>>& bscans = std::nullopt)
{
    require_same_shape(pred.z, truth.z, "boundary_error");
    std::vector<double> err;
    auto take_bscan = [&](int y) {
        for (int x = 0; x < pred.width(); ++x) err.push_back(std::abs(double(pred.z(x, y)) - double(truth.z(x, y))));
    };
    if (bscans) {
        for (int y : *bscans) {
            if (y < 0 || y >= pred.bscans()) throw BoundsError("boundary_error: B-scan index out of range");
            take_bscan(y);
        }
    } else {
        for (int y = 0; y < pred.bscans(); ++y) take_bscan(y);
    }
    return mean_std(err);
}

/// B-scans (y indices) that intersect a lesion mask.
inline std::vector<int> lesion_bscans(const LesionMask& m)
{
    std::vector<int> out;
    for (int y = 0; y < m.mask.cols(); ++y)
        for (int x = 0; x < m.mask.rows(); ++x)
            if (m.mask(x, y)) {
                out.push_back(y);
                break;
            }
    return out;
}

} // namespace rnvkit
