#pragma once

#include <cmath>
#include <random>

#include "rnvkit/nn/tensor.hpp"

namespace rnvkit::nn {

/// He (ReLU variance-scaling) initialization: samples ~ Normal(0, 2 / fan_in).
template <class T = double, class Rng>
Tensor<T> he_init(const Shape& shape, int fan_in, Rng& rng)
{
    if (fan_in <= 0) throw ConfigError("he_init: fan_in must be > 0");
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

} // namespace rnvkit::nn
