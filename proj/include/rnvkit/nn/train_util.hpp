#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "rnvkit/image.hpp"
#include "rnvkit/nn/tensor.hpp"

namespace rnvkit::nn {

/// Patience-based early stopping on a loss to minimize.
struct EarlyStopping {
    int patience = 20;
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    /// Records an epoch; returns true when the value improved.
    bool update(double value, int epoch)
    {
        if (value < best) {
            best = value;
            best_epoch = epoch;
            return true;
        }
        return false;
    }
    bool should_stop(int epoch) const { return best_epoch >= 0 && epoch - best_epoch >= patience; }
};

inline int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

/// Packs equally shaped multi-channel images into an (N, C, H', W') tensor,
/// H' and W' rounded up to `multiple` by replicating the last row/column.
template <class T>
Tensor<T> pack_batch(const std::vector<ImageStack>& batch, int multiple = 1)
{
    if (batch.empty() || batch.front().empty()) throw ShapeError("pack_batch: empty batch");
    const int C = static_cast<int>(batch.front().size());
    const int H = batch.front().front().rows(), W = batch.front().front().cols();
    const int Hp = round_up(H, multiple), Wp = round_up(W, multiple);
    Tensor<T> t(static_cast<int>(batch.size()), C, Hp, Wp);
    for (int n = 0; n < t.n(); ++n) {
        if (static_cast<int>(batch[n].size()) != C) throw ShapeError("pack_batch: channel count differs across samples");
        for (int c = 0; c < C; ++c) {
            const auto& img = batch[n][c];
            if (img.rows() != H || img.cols() != W) throw ShapeError("pack_batch: image size differs across samples");
            for (int h = 0; h < Hp; ++h)
                for (int w = 0; w < Wp; ++w) t(n, c, h, w) = static_cast<T>(img(std::min(h, H - 1), std::min(w, W - 1)));
        }
    }
    return t;
}

/// Channel 0 of sample n cropped to rows x cols.
template <class T>
ImageF unpack_plane(const Tensor<T>& t, int n, int rows, int cols)
{
    ImageF out(rows, cols);
    for (int h = 0; h < rows; ++h)
        for (int w = 0; w < cols; ++w) out(h, w) = static_cast<float>(t(n, 0, h, w));
    return out;
}

} // namespace rnvkit::nn
