#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rnvkit::nn {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckOptions {
    double step = 1e-5;
    /// Denominator floor so gradients near zero are compared absolutely.
    double floor = 1e-8;
    /// Coordinates to probe; 0 checks every coordinate.
    std::size_t samples = 0;
    std::uint64_t seed = 1;
};

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences of `loss` with respect to the coordinates of
/// `x`, compared against `analytic` (same length as x). `x` is perturbed in
/// place and restored.
inline GradCheckReport grad_check(const std::function<double()>& loss, std::span<double> x,
                                  std::span<const double> analytic, const GradCheckOptions& opt = {})
{
    GradCheckReport rep;
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.samples > 0 && opt.samples < idx.size()) {
        std::mt19937_64 rng(opt.seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(opt.samples);
        std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
        const double orig = x[i];
        x[i] = orig + opt.step;
        const double fp = loss();
        x[i] = orig - opt.step;
        const double fm = loss();
        x[i] = orig;
        const double numeric = (fp - fm) / (2.0 * opt.step);
        const double err = relative_error(analytic[i], numeric, opt.floor);
        ++rep.checked;
        if (err > rep.max_rel_error || rep.checked == 1) {
            rep.max_rel_error = std::max(rep.max_rel_error, err);
            if (err >= rep.max_rel_error) {
                rep.worst_index = i;
                rep.worst_analytic = analytic[i];
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

} // namespace rnvkit::nn
