#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "rnvkit/nn/tensor.hpp"

// Forward/backward kernels for the fixed operator set used by the two
// networks. Backward functions accumulate (+=) into parameter gradients and
// overwrite the input gradient.

namespace rnvkit::nn {

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

inline int conv_out_dim(int in, int k, int stride, int pad)
{
    const int out = (in + 2 * pad - k) / stride + 1;
    if (out < 1) throw ShapeError("conv2d: kernel larger than padded input");
    return out;
}

/// Unfolds sample n of x into a (C*kh*kw, Ho*Wo) row-major matrix.
template <class T>
void im2col(const Tensor<T>& x, int n, int kh, int kw, int stride, int pad, int ho, int wo, AlignedVector<T>& cols)
{
    const int C = x.c(), H = x.h(), W = x.w();
    const std::size_t P = static_cast<std::size_t>(ho) * wo;
    cols.assign(static_cast<std::size_t>(C) * kh * kw * P, T{});
    T* row = cols.data();
    for (int c = 0; c < C; ++c) {
        const T* src = x.ptr(n, c);
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j, row += P) {
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = row + static_cast<std::size_t>(oh) * wo;
                    const T* srow = src + static_cast<std::size_t>(ih) * W;
                    if (stride == 1) {
                        const int lo = std::max(0, pad - j);
                        const int hi = std::min(wo, W + pad - j);
                        for (int ow = lo; ow < hi; ++ow) dst[ow] = srow[ow - pad + j];
                    } else {
                        for (int ow = 0; ow < wo; ++ow) {
                            const int iw = ow * stride - pad + j;
                            if (iw >= 0 && iw < W) dst[ow] = srow[iw];
                        }
                    }
                }
            }
    }
}

/// Adjoint of im2col: scatters-adds cols into sample n of dx.
template <class T>
void col2im(const AlignedVector<T>& cols, Tensor<T>& dx, int n, int kh, int kw, int stride, int pad, int ho, int wo)
{
    const int C = dx.c(), H = dx.h(), W = dx.w();
    const std::size_t P = static_cast<std::size_t>(ho) * wo;
    const T* row = cols.data();
    for (int c = 0; c < C; ++c) {
        T* dst = dx.ptr(n, c);
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j, row += P) {
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) continue;
                    const T* src = row + static_cast<std::size_t>(oh) * wo;
                    T* drow = dst + static_cast<std::size_t>(ih) * W;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + j;
                        if (iw >= 0 && iw < W) drow[iw] += src[ow];
                    }
                }
            }
    }
}

} // namespace detail

// --- conv2d -----------------------------------------------------------------

/// Cross-correlation. weight (C_out, C_in, kh, kw), bias (C_out, 1, 1, 1).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1, int padding = -1)
{
    const int cout = weight.n(), cin = weight.c(), kh = weight.h(), kw = weight.w();
    if (x.c() != cin) throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, weight expects " +
                                       std::to_string(cin));
    require_shape(bias, Shape{cout, 1, 1, 1}, "conv2d bias");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (padding < 0) padding = kh / 2;
    const int ho = detail::conv_out_dim(x.h(), kh, stride, padding);
    const int wo = detail::conv_out_dim(x.w(), kw, stride, padding);
    Tensor<T> y(x.n(), cout, ho, wo);
    const int K = cin * kh * kw;
    const int P = ho * wo;
    detail::CMapR<T> wm(weight.ptr(), cout, K);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.ptr(), cout);
    AlignedVector<T> cols;
    for (int n = 0; n < x.n(); ++n) {
        detail::MapR<T> ym(y.ptr(n), cout, P);
        if (kh == 1 && kw == 1 && stride == 1 && padding == 0) {
            ym.noalias() = wm * detail::CMapR<T>(x.ptr(n), cin, P);
        } else {
            detail::im2col(x, n, kh, kw, stride, padding, ho, wo, cols);
            ym.noalias() = wm * detail::CMapR<T>(cols.data(), K, P);
        }
        ym.colwise() += bv;
    }
    return y;
}

/// Gradients of conv2d. dx may be null when the input gradient is not needed.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dweight,
                     Tensor<T>& dbias, int stride = 1, int padding = -1)
{
    const int cout = weight.n(), cin = weight.c(), kh = weight.h(), kw = weight.w();
    if (padding < 0) padding = kh / 2;
    const int ho = dy.h(), wo = dy.w();
    const int K = cin * kh * kw;
    const int P = ho * wo;
    require_shape(dweight, weight.shape(), "conv2d dweight");
    require_shape(dbias, Shape{cout, 1, 1, 1}, "conv2d dbias");
    if (dx) *dx = Tensor<T>(x.shape());
    detail::CMapR<T> wm(weight.ptr(), cout, K);
    detail::MapR<T> dwm(dweight.ptr(), cout, K);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbv(dbias.ptr(), cout);
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
    AlignedVector<T> cols, dcols;
    for (int n = 0; n < x.n(); ++n) {
        detail::CMapR<T> dym(dy.ptr(n), cout, P);
        dbv += dym.rowwise().sum();
        if (pointwise) {
            dwm.noalias() += dym * detail::CMapR<T>(x.ptr(n), cin, P).transpose();
            if (dx) detail::MapR<T>(dx->ptr(n), cin, P).noalias() = wm.transpose() * dym;
        } else {
            detail::im2col(x, n, kh, kw, stride, padding, ho, wo, cols);
            dwm.noalias() += dym * detail::CMapR<T>(cols.data(), K, P).transpose();
            if (dx) {
                dcols.resize(static_cast<std::size_t>(K) * P);
                detail::MapR<T>(dcols.data(), K, P).noalias() = wm.transpose() * dym;
                detail::col2im(dcols, *dx, n, kh, kw, stride, padding, ho, wo);
            }
        }
    }
}

// --- depthwise convolution ------------------------------------------------------

/// Per-channel k x k "same" convolution; weight (C, 1, k, k), no bias.
template <class T>
Tensor<T> depthwise2d(const Tensor<T>& x, const Tensor<T>& weight)
{
    const int C = x.c(), H = x.h(), W = x.w(), k = weight.h();
    if (weight.n() != C || weight.c() != 1 || weight.w() != k || k % 2 == 0)
        throw ShapeError("depthwise2d: weight must be (C, 1, k, k) with odd k, got " + shape_str(weight.shape()));
    const int pad = k / 2;
    Tensor<T> y(x.shape());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = x.ptr(n, c);
            const T* wk = weight.ptr(c);
            T* dst = y.ptr(n, c);
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const T wv = wk[i * k + j];
                    const int lo = std::max(0, pad - j), hi = std::min(W, W + pad - j);
                    for (int h = 0; h < H; ++h) {
                        const int ih = h - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        const std::ptrdiff_t so = static_cast<std::ptrdiff_t>(ih) * W - pad + j;
                        T* drow = dst + static_cast<std::size_t>(h) * W;
                        for (int w = lo; w < hi; ++w) drow[w] += wv * src[so + w];
                    }
                }
        }
    return y;
}

template <class T>
void depthwise2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>* dx,
                          Tensor<T>& dweight)
{
    const int C = x.c(), H = x.h(), W = x.w(), k = weight.h();
    const int pad = k / 2;
    if (dx) *dx = Tensor<T>(x.shape());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = x.ptr(n, c);
            const T* g = dy.ptr(n, c);
            const T* wk = weight.ptr(c);
            T* dwk = dweight.ptr(c);
            T* dsrc = dx ? dx->ptr(n, c) : nullptr;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const int lo = std::max(0, pad - j), hi = std::min(W, W + pad - j);
                    T acc{};
                    const T wv = wk[i * k + j];
                    for (int h = 0; h < H; ++h) {
                        const int ih = h - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        const std::ptrdiff_t so = static_cast<std::ptrdiff_t>(ih) * W - pad + j;
                        const T* grow = g + static_cast<std::size_t>(h) * W;
                        for (int w = lo; w < hi; ++w) {
                            acc += grow[w] * src[so + w];
                            if (dsrc) dsrc[so + w] += wv * grow[w];
                        }
                    }
                    dwk[i * k + j] += acc;
                }
        }
}

/// Depthwise k x k per input channel, then pointwise 1 x 1 mixing with bias.
/// dw (C_in, 1, k, k), pw (C_out, C_in, 1, 1), bias (C_out, 1, 1, 1).
template <class T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& dw, const Tensor<T>& pw, const Tensor<T>& bias)
{
    if (pw.c() != x.c() || pw.h() != 1 || pw.w() != 1) throw ShapeError("depthwise_separable_conv: bad pointwise weight");
    return conv2d(depthwise2d(x, dw), pw, bias, 1, 0);
}

template <class T>
void depthwise_separable_conv_backward(const Tensor<T>& x, const Tensor<T>& dw, const Tensor<T>& pw,
                                       const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& ddw, Tensor<T>& dpw,
                                       Tensor<T>& dbias)
{
    const Tensor<T> mid = depthwise2d(x, dw);
    Tensor<T> dmid;
    conv2d_backward(mid, pw, dy, &dmid, dpw, dbias, 1, 0);
    depthwise2d_backward(x, dw, dmid, dx, ddw);
}

// --- squeeze-and-excitation -----------------------------------------------------

namespace detail {

template <class T>
T sigmoid(T v)
{
    return v >= T{} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

template <class T>
struct SeIntermediates {
    std::vector<T> pooled, hidden, scale; // (N*C), (N*C/r), (N*C)
};

template <class T>
SeIntermediates<T> se_intermediates(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& w2)
{
    const int N = x.n(), C = x.c(), R = w1.n();
    SeIntermediates<T> s;
    s.pooled.assign(static_cast<std::size_t>(N) * C, T{});
    s.hidden.assign(static_cast<std::size_t>(N) * R, T{});
    s.scale.assign(static_cast<std::size_t>(N) * C, T{});
    const auto P = x.plane();
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* p = x.ptr(n, c);
            T acc{};
            for (std::size_t i = 0; i < P; ++i) acc += p[i];
            s.pooled[n * C + c] = acc / static_cast<T>(P);
        }
        for (int r = 0; r < R; ++r) {
            T acc{};
            for (int c = 0; c < C; ++c) acc += w1[static_cast<std::size_t>(r) * C + c] * s.pooled[n * C + c];
            s.hidden[n * R + r] = acc;
        }
        for (int c = 0; c < C; ++c) {
            T acc{};
            for (int r = 0; r < R; ++r) acc += w2[static_cast<std::size_t>(c) * R + r] * std::max(T{}, s.hidden[n * R + r]);
            s.scale[n * C + c] = sigmoid(acc);
        }
    }
    return s;
}

} // namespace detail

/// out[n,c] = sigmoid(W2 relu(W1 mean_hw(x[n])))[c] * x[n,c].
/// w1 (C/r, C, 1, 1), w2 (C, C/r, 1, 1).
template <class T>
Tensor<T> se_block(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& w2)
{
    const int C = x.c(), R = w1.n();
    require_shape(w1, Shape{R, C, 1, 1}, "se_block w1");
    require_shape(w2, Shape{C, R, 1, 1}, "se_block w2");
    const auto s = detail::se_intermediates(x, w1, w2);
    Tensor<T> y(x.shape());
    const auto P = x.plane();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < C; ++c) {
            const T sc = s.scale[n * C + c];
            const T* src = x.ptr(n, c);
            T* dst = y.ptr(n, c);
            for (std::size_t i = 0; i < P; ++i) dst[i] = sc * src[i];
        }
    return y;
}

template <class T>
void se_block_backward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& w2, const Tensor<T>& dy, Tensor<T>* dx,
                       Tensor<T>& dw1, Tensor<T>& dw2)
{
    const int N = x.n(), C = x.c(), R = w1.n();
    const auto s = detail::se_intermediates(x, w1, w2);
    const auto P = x.plane();
    if (dx) *dx = Tensor<T>(x.shape());
    std::vector<T> du(C), da(R), dpool(C);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* g = dy.ptr(n, c);
            const T* src = x.ptr(n, c);
            T ds{};
            for (std::size_t i = 0; i < P; ++i) ds += g[i] * src[i];
            const T sc = s.scale[n * C + c];
            du[c] = ds * sc * (T{1} - sc);
        }
        std::fill(da.begin(), da.end(), T{});
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < R; ++r) {
                const T h = s.hidden[n * R + r];
                dw2[static_cast<std::size_t>(c) * R + r] += du[c] * std::max(T{}, h);
                da[r] += w2[static_cast<std::size_t>(c) * R + r] * du[c];
            }
        std::fill(dpool.begin(), dpool.end(), T{});
        for (int r = 0; r < R; ++r) {
            const T dh = s.hidden[n * R + r] > T{} ? da[r] : T{};
            for (int c = 0; c < C; ++c) {
                dw1[static_cast<std::size_t>(r) * C + c] += dh * s.pooled[n * C + c];
                dpool[c] += w1[static_cast<std::size_t>(r) * C + c] * dh;
            }
        }
        if (!dx) continue;
        for (int c = 0; c < C; ++c) {
            const T sc = s.scale[n * C + c];
            const T spread = dpool[c] / static_cast<T>(P);
            const T* g = dy.ptr(n, c);
            T* d = dx->ptr(n, c);
            for (std::size_t i = 0; i < P; ++i) d[i] = sc * g[i] + spread;
        }
    }
}

/// Channel scales s[n, c] of an SE block, exposed for inspection and tests.
template <class T>
std::vector<T> se_scales(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& w2)
{
    return detail::se_intermediates(x, w1, w2).scale;
}

// --- pooling / upsampling ---------------------------------------------------------

/// 2x2 max pooling, stride 2.
template <class T>
Tensor<T> maxpool2(const Tensor<T>& x)
{
    if (x.h() % 2 || x.w() % 2) throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(x.shape()));
    Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int h = 0; h < y.h(); ++h)
                for (int w = 0; w < y.w(); ++w) {
                    T m = x(n, c, 2 * h, 2 * w);
                    m = std::max(m, x(n, c, 2 * h, 2 * w + 1));
                    m = std::max(m, x(n, c, 2 * h + 1, 2 * w));
                    m = std::max(m, x(n, c, 2 * h + 1, 2 * w + 1));
                    y(n, c, h, w) = m;
                }
    return y;
}

/// Routes each output gradient to the first maximal input of its window
/// (raster order within the window).
template <class T>
Tensor<T> maxpool2_backward(const Tensor<T>& x, const Tensor<T>& dy)
{
    Tensor<T> dx(x.shape());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int h = 0; h < dy.h(); ++h)
                for (int w = 0; w < dy.w(); ++w) {
                    int bh = 2 * h, bw = 2 * w;
                    for (int i = 0; i < 2; ++i)
                        for (int j = 0; j < 2; ++j)
                            if (x(n, c, 2 * h + i, 2 * w + j) > x(n, c, bh, bw)) {
                                bh = 2 * h + i;
                                bw = 2 * w + j;
                            }
                    dx(n, c, bh, bw) += dy(n, c, h, w);
                }
    return dx;
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x)
{
    Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int h = 0; h < y.h(); ++h)
                for (int w = 0; w < y.w(); ++w) y(n, c, h, w) = x(n, c, h / 2, w / 2);
    return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy)
{
    if (dy.h() % 2 || dy.w() % 2) throw ShapeError("upsample2_backward: odd gradient dims");
    Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int h = 0; h < dy.h(); ++h)
                for (int w = 0; w < dy.w(); ++w) dx(n, c, h / 2, w / 2) += dy(n, c, h, w);
    return dx;
}

// --- elementwise / structural ---------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x)
{
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::max(T{}, x[i]);
    return y;
}

/// Gradient of relu given its OUTPUT (y > 0 iff x > 0).
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy)
{
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T{} ? dy[i] : T{};
    return dx;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x)
{
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = detail::sigmoid(x[i]);
    return y;
}

/// Gradient of sigmoid given its OUTPUT.
template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy)
{
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y[i] * (T{1} - y[i]);
    return dx;
}

/// Channel concatenation of tensors sharing N, H, W.
template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts)
{
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& f = *parts.front();
    int C = 0;
    for (const auto* p : parts) {
        if (p->n() != f.n() || p->h() != f.h() || p->w() != f.w())
            throw ShapeError("concat_channels: mismatched " + shape_str(p->shape()) + " vs " + shape_str(f.shape()));
        C += p->c();
    }
    Tensor<T> y(f.n(), C, f.h(), f.w());
    const auto P = f.plane();
    for (int n = 0; n < f.n(); ++n) {
        int off = 0;
        for (const auto* p : parts) {
            std::copy_n(p->ptr(n), P * p->c(), y.ptr(n, off));
            off += p->c();
        }
    }
    return y;
}

/// Splits a channel-concatenated gradient back into parts with the given channel counts.
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& dy, const std::vector<int>& channels)
{
    std::vector<Tensor<T>> out;
    const auto P = dy.plane();
    int off = 0;
    for (int c : channels) {
        Tensor<T> t(dy.n(), c, dy.h(), dy.w());
        for (int n = 0; n < dy.n(); ++n) std::copy_n(dy.ptr(n, off), P * c, t.ptr(n));
        out.push_back(std::move(t));
        off += c;
    }
    if (off != dy.c()) throw ShapeError("split_channels: channel counts do not sum to tensor channels");
    return out;
}

template <class T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& v)
{
    require_shape(v, acc.shape(), "add_inplace");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

} // namespace rnvkit::nn
