#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rnvkit/nn/tensor.hpp"

namespace rnvkit::nn {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    AdamOptions opt;
    std::int64_t step = 0;
    std::vector<Tensor<T>> m, v;

    AdamState() = default;
    AdamState(const ParamRefs<T>& params, AdamOptions o = {}) : opt(o)
    {
        for (const auto* p : params) {
            m.emplace_back(p->value.shape());
            v.emplace_back(p->value.shape());
        }
    }
};

/// One bias-corrected Adam update using the gradients stored on each parameter.
template <class T>
void adam_step(const ParamRefs<T>& params, AdamState<T>& state)
{
    if (params.size() != state.m.size()) throw ShapeError("adam_step: parameter list does not match optimizer state");
    ++state.step;
    const double b1 = state.opt.beta1, b2 = state.opt.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        require_shape(p.grad, p.value.shape(), "adam_step grad");
        require_shape(m, p.value.shape(), "adam_step moment");
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / c1, vhat = vi / c2;
            p.value[i] = static_cast<T>(p.value[i] - state.opt.lr * mhat / (std::sqrt(vhat) + state.opt.eps));
        }
    }
}

} // namespace rnvkit::nn
