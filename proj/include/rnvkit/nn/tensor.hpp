#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "rnvkit/error.hpp"

namespace rnvkit::nn {

using Shape = std::array<int, 4>;

inline std::string shape_str(const Shape& s)
{
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
           std::to_string(s[3]) + ")";
}

inline std::size_t shape_numel(const Shape& s)
{
    for (int d : s)
        if (d < 0) throw ShapeError("negative tensor dimension " + shape_str(s));
    return static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
}

/// 64-byte aligned storage. Vectorised GEMM and reductions take different
/// peeling paths depending on the base address, which shows up as last-bit
/// differences between otherwise identical runs.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW tensor. Parameters use the same 4D layout, e.g. conv weights
/// are (C_out, C_in, k, k) and biases (C_out, 1, 1, 1).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape_numel(shape), fill) {}
    Tensor(int n, int c, int h, int w, T fill = T{}) : Tensor(Shape{n, c, h, w}, fill) {}

    const Shape& shape() const noexcept { return shape_; }
    int n() const noexcept { return shape_[0]; }
    int c() const noexcept { return shape_[1]; }
    int h() const noexcept { return shape_[2]; }
    int w() const noexcept { return shape_[3]; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }

    T& operator()(int n, int c, int h, int w) noexcept { return data_[offset(n, c, h, w)]; }
    const T& operator()(int n, int c, int h, int w) const noexcept { return data_[offset(n, c, h, w)]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T* ptr(int n = 0, int c = 0) noexcept { return data_.data() + offset(n, c, 0, 0); }
    const T* ptr(int n = 0, int c = 0) const noexcept { return data_.data() + offset(n, c, 0, 0); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    Tensor<U> cast() const
    {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t offset(int n, int c, int h, int w) const noexcept
    {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    Shape shape_{0, 0, 0, 0};
    AlignedVector<T> data_;
};

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what)
{
    if (t.shape() != expected)
        throw ShapeError(std::string(what) + ": expected " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

/// A learnable tensor with its accumulated gradient.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

template <class T>
void zero_grads(const ParamRefs<T>& params)
{
    for (auto* p : params) p->grad.fill(T{});
}

template <class T>
std::size_t count_parameters(const ParamRefs<T>& params)
{
    std::size_t n = 0;
    for (auto* p : params) n += p->value.size();
    return n;
}

} // namespace rnvkit::nn
