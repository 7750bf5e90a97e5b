#pragma once

#include <string>
#include <utility>

#include <json.hpp>

#include "rnvkit/nn/init.hpp"
#include "rnvkit/nn/ops.hpp"

namespace rnvkit::nn {

/// Serializable description of one layer; stored in checkpoint headers.
struct LayerSpec {
    std::string name;
    std::string kind; ///< conv | depthwise_sep_conv | se_block | fuse_multiscale | maxpool | upsample | concat_skip | sigmoid_head
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int reduction = 0;
};

inline void to_json(nlohmann::json& j, const LayerSpec& s)
{
    j = {{"name", s.name}, {"kind", s.kind}, {"in", s.in_channels}, {"out", s.out_channels}, {"kernel", s.kernel},
         {"reduction", s.reduction}};
}

inline void from_json(const nlohmann::json& j, LayerSpec& s)
{
    s.name = j.at("name").get<std::string>();
    s.kind = j.at("kind").get<std::string>();
    s.in_channels = j.at("in").get<int>();
    s.out_channels = j.at("out").get<int>();
    s.kernel = j.at("kernel").get<int>();
    s.reduction = j.at("reduction").get<int>();
}

// Analytic parameter counts per layer kind.
inline std::size_t conv_param_count(int cin, int cout, int k) { return std::size_t(cout) * cin * k * k + cout; }
inline std::size_t depthwise_sep_param_count(int cin, int cout, int k)
{
    return std::size_t(cin) * k * k + std::size_t(cin) * cout + cout;
}
inline std::size_t se_param_count(int c, int r) { return 2 * std::size_t(c) * (c / r); }
inline std::size_t multiscale_param_count(int cin, int branch, int cout)
{
    return conv_param_count(cin, branch, 1) + conv_param_count(cin, branch, 3) + conv_param_count(cin, branch, 5) +
           conv_param_count(3 * branch, cout, 1);
}

template <class T>
class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(const std::string& name, int cin, int cout, int k)
        : weight(name + ".weight", {cout, cin, k, k}), bias(name + ".bias", {cout, 1, 1, 1}),
          spec_{name, "conv", cin, cout, k, 0}
    {
        if (cin < 1 || cout < 1 || k < 1 || k % 2 == 0) throw ConfigError("conv layer " + name + ": invalid shape");
    }

    template <class Rng>
    void init(Rng& rng)
    {
        weight.value = he_init<T>(weight.value.shape(), spec_.in_channels * spec_.kernel * spec_.kernel, rng);
        bias.value.fill(T{});
    }

    Tensor<T> forward(const Tensor<T>& x)
    {
        input_ = x;
        return conv2d(x, weight.value, bias.value);
    }

    Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true)
    {
        Tensor<T> dx;
        conv2d_backward(input_, weight.value, dy, need_dx ? &dx : nullptr, weight.grad, bias.grad);
        return dx;
    }

    void collect(ParamRefs<T>& out) { out.insert(out.end(), {&weight, &bias}); }
    const LayerSpec& spec() const { return spec_; }
    std::size_t param_count() const { return conv_param_count(spec_.in_channels, spec_.out_channels, spec_.kernel); }

    Parameter<T> weight, bias;

private:
    LayerSpec spec_;
    Tensor<T> input_;
};

template <class T>
class DepthwiseSepLayer {
public:
    DepthwiseSepLayer() = default;
    DepthwiseSepLayer(const std::string& name, int cin, int cout, int k)
        : depthwise(name + ".dw", {cin, 1, k, k}), pointwise(name + ".pw", {cout, cin, 1, 1}),
          bias(name + ".bias", {cout, 1, 1, 1}), spec_{name, "depthwise_sep_conv", cin, cout, k, 0}
    {
    }

    template <class Rng>
    void init(Rng& rng)
    {
        depthwise.value = he_init<T>(depthwise.value.shape(), spec_.kernel * spec_.kernel, rng);
        pointwise.value = he_init<T>(pointwise.value.shape(), spec_.in_channels, rng);
        bias.value.fill(T{});
    }

    Tensor<T> forward(const Tensor<T>& x)
    {
        input_ = x;
        return depthwise_separable_conv(x, depthwise.value, pointwise.value, bias.value);
    }

    Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true)
    {
        Tensor<T> dx;
        depthwise_separable_conv_backward(input_, depthwise.value, pointwise.value, dy, need_dx ? &dx : nullptr,
                                          depthwise.grad, pointwise.grad, bias.grad);
        return dx;
    }

    void collect(ParamRefs<T>& out) { out.insert(out.end(), {&depthwise, &pointwise, &bias}); }
    const LayerSpec& spec() const { return spec_; }
    std::size_t param_count() const
    {
        return depthwise_sep_param_count(spec_.in_channels, spec_.out_channels, spec_.kernel);
    }

    Parameter<T> depthwise, pointwise, bias;

private:
    LayerSpec spec_;
    Tensor<T> input_;
};

template <class T>
class SeLayer {
public:
    SeLayer() = default;
    SeLayer(const std::string& name, int channels, int reduction)
        : spec_{name, "se_block", channels, channels, 1, reduction}
    {
        if (reduction < 1 || channels % reduction != 0)
            throw ConfigError("se block " + name + ": channels (" + std::to_string(channels) +
                              ") not divisible by reduction " + std::to_string(reduction));
        squeeze = Parameter<T>(name + ".w1", {channels / reduction, channels, 1, 1});
        excite = Parameter<T>(name + ".w2", {channels, channels / reduction, 1, 1});
    }

    template <class Rng>
    void init(Rng& rng)
    {
        squeeze.value = he_init<T>(squeeze.value.shape(), spec_.in_channels, rng);
        excite.value = he_init<T>(excite.value.shape(), spec_.in_channels / spec_.reduction, rng);
    }

    Tensor<T> forward(const Tensor<T>& x)
    {
        input_ = x;
        return se_block(x, squeeze.value, excite.value);
    }

    Tensor<T> backward(const Tensor<T>& dy)
    {
        Tensor<T> dx;
        se_block_backward(input_, squeeze.value, excite.value, dy, &dx, squeeze.grad, excite.grad);
        return dx;
    }

    void collect(ParamRefs<T>& out) { out.insert(out.end(), {&squeeze, &excite}); }
    const LayerSpec& spec() const { return spec_; }
    std::size_t param_count() const { return se_param_count(spec_.in_channels, spec_.reduction); }

    Parameter<T> squeeze, excite;

private:
    LayerSpec spec_;
    Tensor<T> input_;
};

/// Parallel 1x1 / 3x3 / 5x5 convolutions, concatenated, rectified, then
/// mixed by a 1x1 convolution.
template <class T>
class MultiScaleFusion {
public:
    MultiScaleFusion() = default;
    MultiScaleFusion(const std::string& name, int cin, int branch, int cout)
        : k1(name + ".k1", cin, branch, 1), k3(name + ".k3", cin, branch, 3), k5(name + ".k5", cin, branch, 5),
          mix(name + ".mix", 3 * branch, cout, 1), spec_{name, "fuse_multiscale", cin, cout, 5, 0}, branch_(branch)
    {
    }

    template <class Rng>
    void init(Rng& rng)
    {
        k1.init(rng);
        k3.init(rng);
        k5.init(rng);
        mix.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x)
    {
        const auto a = k1.forward(x), b = k3.forward(x), c = k5.forward(x);
        fused_ = relu(concat_channels<T>({&a, &b, &c}));
        return mix.forward(fused_);
    }

    Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true)
    {
        const auto parts = split_channels(relu_backward(fused_, mix.backward(dy)), {branch_, branch_, branch_});
        Tensor<T> dx = k1.backward(parts[0], need_dx);
        const auto d3 = k3.backward(parts[1], need_dx);
        const auto d5 = k5.backward(parts[2], need_dx);
        if (need_dx) {
            add_inplace(dx, d3);
            add_inplace(dx, d5);
        }
        return dx;
    }

    void collect(ParamRefs<T>& out)
    {
        k1.collect(out);
        k3.collect(out);
        k5.collect(out);
        mix.collect(out);
    }
    const LayerSpec& spec() const { return spec_; }
    std::size_t param_count() const { return multiscale_param_count(spec_.in_channels, branch_, spec_.out_channels); }
    int branch_channels() const { return branch_; }

    Conv2dLayer<T> k1, k3, k5, mix;

private:
    LayerSpec spec_;
    int branch_ = 0;
    Tensor<T> fused_;
};

/// Post-activation cache for relu so backward can mask on the output.
template <class T>
struct ReluCache {
    Tensor<T> out;
    Tensor<T> forward(const Tensor<T>& x)
    {
        out = relu(x);
        return out;
    }
    Tensor<T> backward(const Tensor<T>& dy) const { return relu_backward(out, dy); }
};

template <class T>
struct PoolCache {
    Tensor<T> in;
    Tensor<T> forward(const Tensor<T>& x)
    {
        in = x;
        return maxpool2(x);
    }
    Tensor<T> backward(const Tensor<T>& dy) const { return maxpool2_backward(in, dy); }
};

} // namespace rnvkit::nn
