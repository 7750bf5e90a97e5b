#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rnvkit/error.hpp"

namespace rnvkit {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kLossEps = 1e-6;

struct SegLoss {
    double value = 0.0; ///< alpha * bce + (1 - alpha) * dice
    double bce = 0.0;
    double dice = 0.0;
    std::vector<double> grad; ///< d value / d prediction
};

/// Composite VRI loss: alpha * BCE + (1 - alpha) * soft Dice loss. Predictions
/// are clamped to [1e-7, 1 - 1e-7] before both terms; the gradient is zero
/// where the clamp is active.
template <class T>
SegLoss loss_s(std::span<const T> pred, std::span<const T> truth, double alpha = 0.5, bool want_grad = true)
{
    if (pred.size() != truth.size()) throw ShapeError("loss_s: prediction/truth size mismatch");
    if (pred.empty()) throw ShapeError("loss_s: empty input");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("loss_s: alpha must be in [0, 1]");
    const std::size_t n = pred.size();
    double bce = 0.0, inter = 0.0, sum_y = 0.0, sum_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(static_cast<double>(pred[i]), kProbClamp, 1.0 - kProbClamp);
        const double y = truth[i];
        bce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        inter += y * p;
        sum_y += y;
        sum_p += p;
    }
    SegLoss out;
    out.bce = bce / static_cast<double>(n);
    const double den = sum_y + sum_p + kLossEps;
    const double num = 2.0 * inter + kLossEps;
    out.dice = 1.0 - num / den;
    out.value = alpha * out.bce + (1.0 - alpha) * out.dice;
    if (!want_grad) return out;
    out.grad.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = pred[i];
        if (raw < kProbClamp || raw > 1.0 - kProbClamp) {
            out.grad[i] = 0.0;
            continue;
        }
        const double y = truth[i];
        const double dbce = -(y / raw - (1.0 - y) / (1.0 - raw)) / static_cast<double>(n);
        const double ddice = -(2.0 * y * den - num) / (den * den);
        out.grad[i] = alpha * dbce + (1.0 - alpha) * ddice;
    }
    return out;
}

struct BalancedLoss {
    double value = 0.0;
    std::size_t foreground = 0;
    std::size_t background = 0;
    std::vector<double> grad;
};

/// Foreground/background balanced squared error:
/// w_b / (N_b + eps) * sum_bg (y - p)^2 + w_f / (N_f + eps) * sum_fg (y - p)^2.
/// A pixel is foreground when its label is >= 0.5.
template <class T>
BalancedLoss loss_d(std::span<const T> pred, std::span<const T> truth, double w_background = 0.4,
                    double w_foreground = 0.6, bool want_grad = true)
{
    if (pred.size() != truth.size()) throw ShapeError("loss_d: prediction/truth size mismatch");
    if (w_background < 0.0 || w_foreground < 0.0) throw ConfigError("loss_d: weights must be non-negative");
    BalancedLoss out;
    double sb = 0.0, sf = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(truth[i]) - static_cast<double>(pred[i]);
        if (truth[i] >= T(0.5)) {
            ++out.foreground;
            sf += d * d;
        } else {
            ++out.background;
            sb += d * d;
        }
    }
    const double cb = w_background / (static_cast<double>(out.background) + kLossEps);
    const double cf = w_foreground / (static_cast<double>(out.foreground) + kLossEps);
    out.value = cb * sb + cf * sf;
    if (!want_grad) return out;
    out.grad.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(truth[i]) - static_cast<double>(pred[i]);
        out.grad[i] = -2.0 * (truth[i] >= T(0.5) ? cf : cb) * d;
    }
    return out;
}

} // namespace rnvkit
