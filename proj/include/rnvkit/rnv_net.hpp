#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnvkit/components.hpp"
#include "rnvkit/dataset.hpp"
#include "rnvkit/filters.hpp"
#include "rnvkit/losses.hpp"
#include "rnvkit/nn/adam.hpp"
#include "rnvkit/nn/checkpoint.hpp"
#include "rnvkit/nn/layers.hpp"
#include "rnvkit/nn/train_util.hpp"
#include "rnvkit/slab.hpp"
#include "rnvkit/vri_net.hpp"

namespace rnvkit {

struct RnvNetConfig {
    int stages = 3;
    int base_channels = 16;
    int se_reduction = 4;
    double weight_background = 0.4;
    double weight_foreground = 0.6;
    double threshold = 0.5;
    int min_area_px = 32;
    double lr = 1e-4;
    int batch_size = 2;
    int max_epochs = 1000;
    int patience = 20;
    double val_fraction = 0.2;
    bool augment = true;
    AugmentOptions augmentation{};

    void validate() const
    {
        if (stages < 1) throw ConfigError("rnv-net: stages must be >= 1");
        if (base_channels < 1 || se_reduction < 1) throw ConfigError("rnv-net: base_channels and se_reduction must be >= 1");
        if (base_channels % se_reduction) throw ConfigError("rnv-net: base_channels must be a multiple of se_reduction");
        if (weight_background < 0 || weight_foreground < 0) throw ConfigError("rnv-net: loss weights must be >= 0");
        if (!(threshold > 0 && threshold < 1)) throw ConfigError("rnv-net: threshold must be in (0, 1)");
        if (min_area_px < 1) throw ConfigError("rnv-net: min_area_px must be >= 1");
        if (!(lr > 0)) throw ConfigError("rnv-net: lr must be > 0");
        if (batch_size < 1 || max_epochs < 1 || patience < 1) throw ConfigError("rnv-net: batch/epochs/patience must be >= 1");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("rnv-net: val_fraction must be in (0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const RnvNetConfig& c)
{
    j = {{"stages", c.stages},
         {"base_channels", c.base_channels},
         {"se_reduction", c.se_reduction},
         {"weight_background", c.weight_background},
         {"weight_foreground", c.weight_foreground},
         {"threshold", c.threshold},
         {"min_area_px", c.min_area_px},
         {"lr", c.lr},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"patience", c.patience},
         {"val_fraction", c.val_fraction},
         {"augment", c.augment}};
}

inline void from_json(const nlohmann::json& j, RnvNetConfig& c)
{
    const RnvNetConfig d;
    c.stages = j.value("stages", d.stages);
    c.base_channels = j.value("base_channels", d.base_channels);
    c.se_reduction = j.value("se_reduction", d.se_reduction);
    c.weight_background = j.value("weight_background", d.weight_background);
    c.weight_foreground = j.value("weight_foreground", d.weight_foreground);
    c.threshold = j.value("threshold", d.threshold);
    c.min_area_px = j.value("min_area_px", d.min_area_px);
    c.lr = j.value("lr", d.lr);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.patience = j.value("patience", d.patience);
    c.val_fraction = j.value("val_fraction", d.val_fraction);
    c.augment = j.value("augment", d.augment);
}

/// Dual-branch encoder over the en-face stack. The OCT branch sees
/// {vitreous, gcc}, the OCTA branch {vitreous, gcc, subtracted}. Each block is
/// conv3x3, depthwise-separable conv3x3, SE, maxpool. Branches are concatenated
/// at the bottleneck; decoder blocks take both branches' skips. A multi-scale
/// fusion head produces the probability map.
template <class T>
class RnvNet {
public:
    explicit RnvNet(const RnvNetConfig& cfg) : cfg_(cfg)
    {
        cfg_.validate();
        for (int b = 0; b < 2; ++b) {
            int in = b == 0 ? EnFaceStack::kOctChannels : EnFaceStack::kOctaChannels;
            const std::string branch = b == 0 ? "oct" : "octa";
            for (int i = 0; i < cfg_.stages; ++i) {
                const int c = channels(i);
                const std::string p = branch + ".enc" + std::to_string(i);
                enc_[b].push_back({nn::Conv2dLayer<T>(p + ".conv", in, c, 3), {},
                                   nn::DepthwiseSepLayer<T>(p + ".dsconv", c, c, 3), {},
                                   nn::SeLayer<T>(p + ".se", c, cfg_.se_reduction), {}});
                in = c;
            }
        }
        const int top = channels(cfg_.stages - 1);
        bottleneck_ = nn::Conv2dLayer<T>("bottleneck.conv", 2 * top, channels(cfg_.stages), 3);
        bottleneck_se_ = nn::SeLayer<T>("bottleneck.se", channels(cfg_.stages), cfg_.se_reduction);
        int below = channels(cfg_.stages);
        dec_.resize(cfg_.stages);
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            const int c = channels(i);
            const std::string p = "dec" + std::to_string(i);
            dec_[i] = {nn::Conv2dLayer<T>(p + ".conv", below + 2 * c, c, 3), {}, nn::SeLayer<T>(p + ".se", c, cfg_.se_reduction),
                       below, c};
            below = c;
        }
        head_ = nn::MultiScaleFusion<T>("head.fuse", channels(0), channels(0), 1);
    }

    const RnvNetConfig& config() const { return cfg_; }
    int channels(int level) const { return cfg_.base_channels << level; }
    int input_multiple() const { return 1 << cfg_.stages; }

    template <class Rng>
    void init(Rng& rng)
    {
        for (auto& branch : enc_)
            for (auto& e : branch) {
                e.conv.init(rng);
                e.dsconv.init(rng);
                e.se.init(rng);
            }
        bottleneck_.init(rng);
        bottleneck_se_.init(rng);
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            dec_[i].conv.init(rng);
            dec_[i].se.init(rng);
        }
        head_.init(rng);
    }

    /// x: (N, 5, H, W), channels ordered OCT {vit, gcc} then OCTA {vit, gcc, sub}.
    nn::Tensor<T> forward(const nn::Tensor<T>& x)
    {
        if (x.c() != EnFaceStack::kChannels)
            throw ShapeError("rnv-net: expected 5 input channels, got " + std::to_string(x.c()));
        if (x.h() % input_multiple() || x.w() % input_multiple())
            throw ShapeError("rnv-net: spatial dims must be multiples of " + std::to_string(input_multiple()));
        auto parts = nn::split_channels(x, {EnFaceStack::kOctChannels, EnFaceStack::kOctaChannels});
        nn::Tensor<T> pooled[2];
        for (int b = 0; b < 2; ++b) {
            skips_[b].assign(cfg_.stages, {});
            nn::Tensor<T> h = std::move(parts[b]);
            for (int i = 0; i < cfg_.stages; ++i) {
                auto& e = enc_[b][i];
                h = e.act1.forward(e.conv.forward(h));
                h = e.se.forward(e.act2.forward(e.dsconv.forward(h)));
                skips_[b][i] = h;
                h = e.pool.forward(h);
            }
            pooled[b] = std::move(h);
        }
        nn::Tensor<T> h = bottleneck_se_.forward(bottleneck_act_.forward(bottleneck_.forward(nn::concat_channels<T>({&pooled[0], &pooled[1]}))));
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            auto& d = dec_[i];
            const auto up = nn::upsample2(h);
            h = d.se.forward(d.act.forward(d.conv.forward(nn::concat_channels<T>({&up, &skips_[0][i], &skips_[1][i]}))));
        }
        prob_ = nn::sigmoid(head_.forward(h));
        return prob_;
    }

    void backward(const nn::Tensor<T>& dprob)
    {
        nn::Tensor<T> dh = head_.backward(nn::sigmoid_backward(prob_, dprob));
        std::vector<nn::Tensor<T>> dskip[2];
        dskip[0].resize(cfg_.stages);
        dskip[1].resize(cfg_.stages);
        for (int i = 0; i < cfg_.stages; ++i) {
            auto& d = dec_[i];
            auto parts = nn::split_channels(d.conv.backward(d.act.backward(d.se.backward(dh))),
                                            {d.up_channels, d.skip_channels, d.skip_channels});
            dskip[0][i] = std::move(parts[1]);
            dskip[1][i] = std::move(parts[2]);
            dh = nn::upsample2_backward(parts[0]);
        }
        dh = bottleneck_.backward(bottleneck_act_.backward(bottleneck_se_.backward(dh)));
        const int top = channels(cfg_.stages - 1);
        auto branch_grads = nn::split_channels(dh, {top, top});
        for (int b = 0; b < 2; ++b) {
            nn::Tensor<T> g = std::move(branch_grads[b]);
            for (int i = cfg_.stages - 1; i >= 0; --i) {
                auto& e = enc_[b][i];
                g = e.pool.backward(g);
                nn::add_inplace(g, dskip[b][i]);
                g = e.dsconv.backward(e.act2.backward(e.se.backward(g)));
                g = e.conv.backward(e.act1.backward(g), i > 0);
            }
        }
    }

    nn::ParamRefs<T> parameters()
    {
        nn::ParamRefs<T> out;
        for (auto& branch : enc_)
            for (auto& e : branch) {
                e.conv.collect(out);
                e.dsconv.collect(out);
                e.se.collect(out);
            }
        bottleneck_.collect(out);
        bottleneck_se_.collect(out);
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            dec_[i].conv.collect(out);
            dec_[i].se.collect(out);
        }
        head_.collect(out);
        return out;
    }

    std::vector<nn::LayerSpec> layer_specs() const
    {
        std::vector<nn::LayerSpec> out;
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < cfg_.stages; ++i) {
                const auto& e = enc_[b][i];
                out.push_back(e.conv.spec());
                out.push_back(e.dsconv.spec());
                out.push_back(e.se.spec());
                out.push_back({std::string(b == 0 ? "oct" : "octa") + ".enc" + std::to_string(i) + ".pool", "maxpool",
                               channels(i), channels(i), 2, 0});
            }
        const int top = channels(cfg_.stages - 1);
        out.push_back({"bottleneck.merge", "concat_branches", 2 * top, 2 * top, 0, 0});
        out.push_back(bottleneck_.spec());
        out.push_back(bottleneck_se_.spec());
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            const auto& d = dec_[i];
            out.push_back({"dec" + std::to_string(i) + ".up", "upsample", d.up_channels, d.up_channels, 2, 0});
            out.push_back({"dec" + std::to_string(i) + ".skip", "concat_skip", d.up_channels + 2 * d.skip_channels,
                           d.up_channels + 2 * d.skip_channels, 0, 0});
            out.push_back(d.conv.spec());
            out.push_back(d.se.spec());
        }
        out.push_back(head_.spec());
        out.push_back({"head.sigmoid", "sigmoid_head", 1, 1, 0, 0});
        return out;
    }

    std::size_t param_count() { return nn::count_parameters(parameters()); }

    static std::size_t analytic_param_count(const RnvNetConfig& cfg)
    {
        std::size_t n = 0;
        for (int in0 : {EnFaceStack::kOctChannels, EnFaceStack::kOctaChannels}) {
            int in = in0;
            for (int i = 0; i < cfg.stages; ++i) {
                const int c = cfg.base_channels << i;
                n += nn::conv_param_count(in, c, 3) + nn::depthwise_sep_param_count(c, c, 3) + nn::se_param_count(c, cfg.se_reduction);
                in = c;
            }
        }
        int below = cfg.base_channels << cfg.stages;
        n += nn::conv_param_count(2 * (cfg.base_channels << (cfg.stages - 1)), below, 3) + nn::se_param_count(below, cfg.se_reduction);
        for (int i = cfg.stages - 1; i >= 0; --i) {
            const int c = cfg.base_channels << i;
            n += nn::conv_param_count(below + 2 * c, c, 3) + nn::se_param_count(c, cfg.se_reduction);
            below = c;
        }
        return n + nn::multiscale_param_count(cfg.base_channels, cfg.base_channels, 1);
    }

    nn::DepthwiseSepLayer<T>& second_layer(int branch, int stage) { return enc_.at(branch).at(stage).dsconv; }

private:
    struct Encoder {
        nn::Conv2dLayer<T> conv;
        nn::ReluCache<T> act1;
        nn::DepthwiseSepLayer<T> dsconv;
        nn::ReluCache<T> act2;
        nn::SeLayer<T> se;
        nn::PoolCache<T> pool;
    };
    struct Decoder {
        nn::Conv2dLayer<T> conv;
        nn::ReluCache<T> act;
        nn::SeLayer<T> se;
        int up_channels = 0, skip_channels = 0;
    };

    RnvNetConfig cfg_;
    std::array<std::vector<Encoder>, 2> enc_;
    nn::Conv2dLayer<T> bottleneck_;
    nn::ReluCache<T> bottleneck_act_;
    nn::SeLayer<T> bottleneck_se_;
    std::vector<Decoder> dec_;
    nn::MultiScaleFusion<T> head_;
    std::array<std::vector<nn::Tensor<T>>, 2> skips_;
    nn::Tensor<T> prob_;
};

template <class T = double>
RnvNet<T> build_rnv_net(const RnvNetConfig& cfg, std::uint64_t seed)
{
    RnvNet<T> net(cfg);
    std::mt19937_64 rng(seed);
    net.init(rng);
    return net;
}

// --- diagnosis ------------------------------------------------------------------

struct DiagnosisComponent {
    std::int64_t area_px = 0;
    double area_mm2 = 0.0;
    double centroid_x = 0.0, centroid_y = 0.0;
};

struct DiagnosisResult {
    bool is_rnv = false;
    double score = 0.0; ///< max pixel probability
    LesionMask mask;
    std::vector<DiagnosisComponent> components;
};

/// Components of (p >= t) with at least min_area pixels; score is max p.
inline DiagnosisResult diagnose(const ImageF& prob, double threshold, int min_area_px, const Spacing& spacing)
{
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("diagnose: threshold must be in (0, 1)");
    if (min_area_px < 1) throw ConfigError("diagnose: min_area_px must be >= 1");
    ImageU8 fg(prob.rows(), prob.cols(), 0);
    double score = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        fg.data()[i] = prob.data()[i] >= threshold ? 1 : 0;
        score = std::max(score, static_cast<double>(prob.data()[i]));
    }
    DiagnosisResult r;
    r.score = score;
    r.mask.mask = filter_components_by_area(fg, min_area_px);
    for (const auto& c : label_components(r.mask.mask).components)
        r.components.push_back({c.area_px, static_cast<double>(c.area_px) * pixel_area_mm2(spacing), c.centroid_row, c.centroid_col});
    r.is_rnv = !r.components.empty();
    return r;
}

inline nlohmann::json diagnosis_json(const std::string& case_id, const DiagnosisResult& d)
{
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : d.components)
        comps.push_back({{"area_px", c.area_px}, {"area_mm2", c.area_mm2}, {"centroid", {c.centroid_x, c.centroid_y}}});
    return {{"case_id", case_id}, {"is_rnv", d.is_rnv}, {"score", d.score}, {"components", comps}};
}

// --- vessel refinement -------------------------------------------------------------

struct RefineOptions {
    std::vector<int> windows{7, 15, 31};
    double c = 0.5;
    int opening_radius = 1;
    int min_component_px = 8;
};

namespace detail {

/// Local mean and population std over a w x w window clipped to the image.
struct LocalStats {
    ImageD mean, std;
};

inline LocalStats local_stats(const ImageF& img, int w)
{
    const int R = img.rows(), C = img.cols(), h = w / 2;
    Image2D<double> s1(R + 1, C + 1, 0.0), s2(R + 1, C + 1, 0.0);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            const double v = img(r, c);
            s1(r + 1, c + 1) = v + s1(r, c + 1) + s1(r + 1, c) - s1(r, c);
            s2(r + 1, c + 1) = v * v + s2(r, c + 1) + s2(r + 1, c) - s2(r, c);
        }
    LocalStats out{ImageD(R, C), ImageD(R, C)};
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            const int r0 = std::max(0, r - h), r1 = std::min(R, r + h + 1);
            const int c0 = std::max(0, c - h), c1 = std::min(C, c + h + 1);
            const double n = double(r1 - r0) * double(c1 - c0);
            const double a = s1(r1, c1) - s1(r0, c1) - s1(r1, c0) + s1(r0, c0);
            const double b = s2(r1, c1) - s2(r0, c1) - s2(r1, c0) + s2(r0, c0);
            const double mean = a / n;
            out.mean(r, c) = mean;
            out.std(r, c) = std::sqrt(std::max(0.0, b / n - mean * mean));
        }
    return out;
}

/// Keeps components of m that share at least one pixel with the mask.
inline ImageU8 components_touching(const ImageU8& m, const ImageU8& mask)
{
    const auto cl = label_components(m);
    std::vector<char> keep(cl.components.size() + 1, 0);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (cl.labels.data()[i] > 0 && mask.data()[i]) keep[cl.labels.data()[i]] = 1;
    ImageU8 out(m.rows(), m.cols(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = keep[cl.labels.data()[i]] ? 1 : 0;
    return out;
}

} // namespace detail

/// Pixels brighter than mean + c*std in any window, before morphology.
inline ImageU8 vessel_candidates(const ImageF& octa_vitreous, const RefineOptions& opt = {})
{
    ImageU8 cand(octa_vitreous.rows(), octa_vitreous.cols(), 0);
    for (int w : opt.windows) {
        if (w < 1) throw ConfigError("refine_vessels: window sizes must be >= 1");
        const auto st = detail::local_stats(octa_vitreous, w);
        for (std::size_t i = 0; i < cand.size(); ++i)
            if (octa_vitreous.data()[i] > st.mean.data()[i] + opt.c * st.std.data()[i]) cand.data()[i] = 1;
    }
    return cand;
}

/// Multi-scale adaptive threshold, restricted to candidate components that
/// touch the membrane, cleaned by an opening and a minimum component size.
inline ImageU8 refine_vessels(const ImageF& octa_vitreous, const LesionMask& membrane, const RefineOptions& opt = {})
{
    require_same_shape(octa_vitreous, membrane.mask, "refine_vessels");
    auto v = detail::components_touching(vessel_candidates(octa_vitreous, opt), membrane.mask);
    v = filter_components_by_area(opening(v, opt.opening_radius), opt.min_component_px);
    // Opening can split a component; fragments that no longer reach the membrane go.
    return detail::components_touching(v, membrane.mask);
}

/// Lesion flow projected onto the inner-slab en-face OCTA: the GCC projection
/// everywhere, replaced by the vitreous flow where the membrane mask is set.
inline ImageF lesion_overlay(const EnFaceStack& st, const LesionMask& m)
{
    require_same_shape(st.octa_gcc, m.mask, "lesion_overlay");
    ImageF out = st.octa_gcc;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (m.mask.data()[i]) out.data()[i] = std::max(out.data()[i], st.octa_vitreous.data()[i]);
    return out;
}

// --- training -------------------------------------------------------------------

struct RnvSample {
    std::string id;
    ImageStack channels; ///< normalized 5-channel stack
    ImageF target;       ///< (X, Y) lesion labels
};

enum class SurfaceSource { Truth, Predicted };

inline SurfaceSource surface_source_from_string(const std::string& s)
{
    if (s == "truth") return SurfaceSource::Truth;
    if (s == "predicted") return SurfaceSource::Predicted;
    throw ConfigError("surface source must be 'truth' or 'predicted', got '" + s + "'");
}

inline const char* to_string(SurfaceSource s) { return s == SurfaceSource::Truth ? "truth" : "predicted"; }

struct RnvEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct RnvTrainResult {
    RnvNet<double> model;
    std::vector<RnvEpochLog> log;
    int best_epoch = -1;
    bool stopped_early = false;
    std::vector<std::string> train_ids, val_ids;
};

inline std::string rnv_log_csv(const std::vector<RnvEpochLog>& log)
{
    std::string out = "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
        out += buf;
    }
    return out;
}

inline ImageF lesion_target(const LesionMask& m)
{
    ImageF t(m.mask.rows(), m.mask.cols());
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = m.mask.data()[i] ? 1.0f : 0.0f;
    return t;
}

namespace detail {

template <class T>
BalancedLoss windowed_loss_d(const nn::Tensor<T>& prob, int n, const ImageF& target, double wb, double wf, bool want_grad,
                             nn::Tensor<T>* grad)
{
    const int rows = target.rows(), cols = target.cols();
    std::vector<T> p, y;
    p.reserve(target.size());
    y.reserve(target.size());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            p.push_back(prob(n, 0, r, c));
            y.push_back(static_cast<T>(target(r, c)));
        }
    BalancedLoss l = loss_d<T>(p, y, wb, wf, want_grad);
    if (want_grad && grad) {
        std::size_t k = 0;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) (*grad)(n, 0, r, c) = static_cast<T>(l.grad[k++]);
    }
    return l;
}

} // namespace detail

inline double evaluate_rnv(RnvNet<double>& net, const std::vector<RnvSample>& samples, const RnvNetConfig& cfg)
{
    double total = 0.0;
    for (const auto& s : samples) {
        const auto prob = net.forward(nn::pack_batch<double>({s.channels}, net.input_multiple()));
        total += detail::windowed_loss_d<double>(prob, 0, s.target, cfg.weight_background, cfg.weight_foreground, false, nullptr).value;
    }
    return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

/// Trains on prepared samples; loss is averaged per image within a batch.
inline RnvTrainResult train_rnv_samples(const std::vector<RnvSample>& train, const std::vector<RnvSample>& val,
                                        const RnvNetConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {})
{
    cfg.validate();
    if (train.empty() || val.empty()) throw ConfigError("train_rnv: need training and validation samples");
    std::mt19937_64 rng(seed);
    RnvTrainResult result{build_rnv_net<double>(cfg, seed), {}, -1, false, {}, {}};
    for (const auto& s : train) result.train_ids.push_back(s.id);
    for (const auto& s : val) result.val_ids.push_back(s.id);
    auto& net = result.model;
    auto params = net.parameters();
    nn::AdamState<double> adam(params, {cfg.lr});
    nn::EarlyStopping stopper{cfg.patience};
    std::vector<nn::Tensor<double>> best_values;
    std::vector<int> order(train.size());
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::shuffle(order.begin(), order.end(), rng);
        double train_loss = 0.0;
        int steps = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::vector<ImageStack> batch;
            std::vector<const ImageF*> targets;
            for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
                batch.push_back(train[order[k]].channels);
                targets.push_back(&train[order[k]].target);
            }
            if (cfg.augment) augment(batch, rng, cfg.augmentation);
            const auto prob = net.forward(nn::pack_batch<double>(batch, net.input_multiple()));
            nn::Tensor<double> grad(prob.shape());
            double loss = 0.0;
            for (int n = 0; n < prob.n(); ++n)
                loss += detail::windowed_loss_d(prob, n, *targets[n], cfg.weight_background, cfg.weight_foreground, true, &grad).value;
            const double inv = 1.0 / prob.n();
            for (auto& g : grad.data()) g *= inv;
            nn::zero_grads(params);
            net.backward(grad);
            nn::adam_step(params, adam);
            train_loss += loss * inv;
            ++steps;
        }
        const double v = evaluate_rnv(net, val, cfg);
        result.log.push_back({epoch, train_loss / steps, v});
        if (on_epoch) on_epoch(epoch, result.log.back().train_loss, v);
        if (stopper.update(v, epoch)) {
            best_values.clear();
            for (auto* p : params) best_values.push_back(p->value);
        }
        if (stopper.should_stop(epoch)) {
            result.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_values[k];
    result.best_epoch = stopper.best_epoch;
    return result;
}

/// Network input for a case given its VRI surface.
inline RnvSample make_rnv_sample(const std::string& id, const Volume& oct, const Volume& octa, const VriSurface& s,
                                 const LesionMask& truth, double k = kDefaultSubtractionScale)
{
    return {id, stack_channels(build_stack(oct, octa, s, k)), lesion_target(truth)};
}

/// Trains the lesion network on the manifest's training split. With
/// SurfaceSource::Predicted each case's surface comes from `vri`.
template <class V = float>
RnvTrainResult train_rnv(const Manifest& m, const RnvNetConfig& cfg, std::uint64_t seed, SurfaceSource source,
                         const VriNet<V>* vri = nullptr, int workers = 1, const EpochCallback& on_epoch = {})
{
    cfg.validate();
    if (source == SurfaceSource::Predicted && !vri) throw ConfigError("train_rnv: predicted surfaces need a VRI model");
    const auto all = m.split("train");
    if (std::none_of(all.begin(), all.end(), [](const CaseEntry* c) { return c->rnv; }))
        throw ConfigError("train_rnv: need at least one RNV-positive training case");
    std::mt19937_64 split_rng(seed);
    auto [train_cases, val_cases] = split_train_val(m, cfg.val_fraction, split_rng);
    auto prepare = [&](const std::vector<const CaseEntry*>& entries) {
        std::vector<RnvSample> out;
        for (const auto* e : entries) {
            const auto c = load_case(m, *e);
            const VriSurface s = source == SurfaceSource::Truth ? c.vri : infer_vri(c.oct, c.octa, *vri, workers).surface;
            out.push_back(make_rnv_sample(e->id, c.oct, c.octa, s, c.lesion));
        }
        return out;
    };
    return train_rnv_samples(prepare(train_cases), prepare(val_cases), cfg, seed ^ 0x9e3779b97f4a7c15ULL, on_epoch);
}

// --- checkpoints and inference ------------------------------------------------------

inline void save_rnv_checkpoint(RnvNet<double>& net, const std::filesystem::path& path)
{
    nn::save_checkpoint(path, "rnv", nlohmann::json(net.config()), net.layer_specs(), net.parameters());
}

template <class T = float>
RnvNet<T> rnv_net_from_checkpoint(const nn::Checkpoint& ck)
{
    if (ck.model() != "rnv") throw FormatError("checkpoint holds a '" + ck.model() + "' model, expected 'rnv'");
    RnvNet<T> net(ck.config().get<RnvNetConfig>());
    nn::assign_parameters(ck, net.parameters());
    return net;
}

template <class T = float>
RnvNet<T> load_rnv_net(const std::filesystem::path& path)
{
    return rnv_net_from_checkpoint<T>(nn::load_checkpoint(path));
}

struct RnvInference {
    ImageF probability; ///< (X, Y)
    DiagnosisResult diagnosis;
};

/// Probability map and diagnosis for one en-face stack. Threshold and minimum
/// area come from the network config unless overridden.
template <class T>
RnvInference infer_rnv(const EnFaceStack& st, RnvNet<T>& net, const Spacing& spacing, std::optional<double> threshold = {},
                       std::optional<int> min_area_px = {})
{
    const auto ch = stack_channels(st);
    const auto prob = net.forward(nn::pack_batch<T>({ch}, net.input_multiple()));
    RnvInference out;
    out.probability = nn::unpack_plane(prob, 0, st.width(), st.bscans());
    out.diagnosis = diagnose(out.probability, threshold.value_or(net.config().threshold),
                             min_area_px.value_or(net.config().min_area_px), spacing);
    return out;
}

} // namespace rnvkit
