#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rnvkit/error.hpp"

namespace rnvkit {

/// Dense row-major 2D array. The first index is the row, the second the
/// column; "column-wise" operations act along the first index with the
/// second held fixed. En-face images are (X, Y); B-scan images are (Z, X).
template <class T>
class Image2D {
public:
    Image2D() = default;
    Image2D(int rows, int cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill)
    {
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    const T& operator()(int r, int c) const noexcept
    {
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    bool same_shape(const Image2D& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Image2D&, const Image2D&) = default;

private:
    static std::size_t checked_size(int rows, int cols)
    {
        if (rows < 0 || cols < 0) throw ShapeError("Image2D: negative dimension");
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

using ImageF = Image2D<float>;
using ImageD = Image2D<double>;
using ImageU8 = Image2D<std::uint8_t>;
using ImageStack = std::vector<ImageF>;

template <class A, class B>
void require_same_shape(const Image2D<A>& a, const Image2D<B>& b, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}

template <class T>
std::size_t count_nonzero(const Image2D<T>& img)
{
    return static_cast<std::size_t>(
        std::count_if(img.data().begin(), img.data().end(), [](T v) { return v != T{}; }));
}

} // namespace rnvkit
