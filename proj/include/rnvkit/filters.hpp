#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rnvkit/image.hpp"

namespace rnvkit {

/// Separable Gaussian blur with mirrored borders; kernel radius ceil(3 sigma).
inline ImageD gaussian_blur(const ImageD& img, double sigma)
{
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    auto mirror = [](int i, int n) {
        if (n == 1) return 0;
        const int period = 2 * (n - 1);
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - i;
    };
    ImageD tmp(img.rows(), img.cols()), out(img.rows(), img.cols());
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img(r, mirror(c + i, img.cols()));
            tmp(r, c) = acc;
        }
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(mirror(r + i, img.rows()), c);
            out(r, c) = acc;
        }
    return out;
}

/// Rescales to zero mean, unit population std (no-op for constant images).
inline void standardize(ImageD& img)
{
    double mean = 0.0;
    for (double v : img.data()) mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (double v : img.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(img.size()));
    for (double& v : img.data()) v = sd > 0 ? (v - mean) / sd : 0.0;
}

/// Binary dilation / erosion with a (2r+1)^2 square or a disk of radius r.
template <class T>
ImageU8 morph(const Image2D<T>& m, int radius, bool dilate, bool disk = true)
{
    ImageU8 out(m.rows(), m.cols(), 0);
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) {
            bool hit = !dilate;
            for (int dr = -radius; dr <= radius && hit != dilate; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    if (disk && dr * dr + dc * dc > radius * radius) continue;
                    const int rr = r + dr, cc = c + dc;
                    // Outside the image counts as background for both operations.
                    const bool on = rr >= 0 && cc >= 0 && rr < m.rows() && cc < m.cols() && m(rr, cc) != T{};
                    if (dilate && on) {
                        hit = true;
                        break;
                    }
                    if (!dilate && !on) {
                        hit = false;
                        break;
                    }
                }
            out(r, c) = hit ? 1 : 0;
        }
    return out;
}

template <class T>
ImageU8 dilate(const Image2D<T>& m, int radius, bool disk = true)
{
    return morph(m, radius, true, disk);
}

template <class T>
ImageU8 erode(const Image2D<T>& m, int radius, bool disk = true)
{
    return morph(m, radius, false, disk);
}

/// Erosion followed by dilation.
template <class T>
ImageU8 opening(const Image2D<T>& m, int radius)
{
    return dilate(erode(m, radius), radius);
}

} // namespace rnvkit
