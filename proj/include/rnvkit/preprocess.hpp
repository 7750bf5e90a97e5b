#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "rnvkit/image.hpp"

namespace rnvkit {

/// Columns whose population std is below this map to all zeros.
inline constexpr double kDegenerateColumnStd = 1e-6;
inline constexpr float kFloorThreshold = -0.5f;

/// Normalizes every column (fixed second index) to zero mean and unit
/// population std.
template <class T>
Image2D<T> column_zscore(const Image2D<T>& img)
{
    Image2D<T> out(img.rows(), img.cols());
    const int n = img.rows();
    for (int c = 0; c < img.cols(); ++c) {
        double mean = 0.0;
        for (int r = 0; r < n; ++r) mean += img(r, c);
        mean /= n;
        double var = 0.0;
        for (int r = 0; r < n; ++r) {
            const double d = img(r, c) - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / n);
        for (int r = 0; r < n; ++r)
            out(r, c) = sd < kDegenerateColumnStd ? T{} : static_cast<T>((img(r, c) - mean) / sd);
    }
    return out;
}

/// Zeroes values strictly below -0.5.
template <class T>
Image2D<T> threshold_floor(const Image2D<T>& img)
{
    Image2D<T> out = img;
    for (auto& v : out.data())
        if (v < static_cast<T>(kFloorThreshold)) v = T{};
    return out;
}

/// column_zscore followed by threshold_floor, channel by channel.
inline ImageStack normalize_stack(const ImageStack& stack)
{
    ImageStack out;
    out.reserve(stack.size());
    for (const auto& ch : stack) out.push_back(threshold_floor(column_zscore(ch)));
    return out;
}

struct AugmentOptions {
    double probability = 0.5;
    double brightness_low = 0.8;
    double brightness_high = 1.2;
    double noise_sigma = 0.1;
};

/// Training-time augmentation. Each sample is selected with the configured
/// probability; a selected sample is scaled by one brightness factor across
/// all channels, then every column of every channel receives one Gaussian
/// offset. Draw order is fixed so the result depends only on the rng state.
template <class Rng>
void augment(std::vector<ImageStack>& batch, Rng& rng, const AugmentOptions& opt = {})
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& sample : batch) {
        if (!(unit(rng) < opt.probability)) continue;
        const double scale = opt.brightness_low + (opt.brightness_high - opt.brightness_low) * unit(rng);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto& ch : sample) {
            for (auto& v : ch.data()) v = static_cast<float>(v * scale);
            for (int c = 0; c < ch.cols(); ++c) {
                const double offset = opt.noise_sigma * noise(rng);
                for (int r = 0; r < ch.rows(); ++r) ch(r, c) = static_cast<float>(ch(r, c) + offset);
            }
        }
    }
}

} // namespace rnvkit
