#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnvkit/dataset.hpp"
#include "rnvkit/losses.hpp"
#include "rnvkit/nn/adam.hpp"
#include "rnvkit/nn/checkpoint.hpp"
#include "rnvkit/nn/layers.hpp"
#include "rnvkit/nn/train_util.hpp"
#include "rnvkit/parallel.hpp"
#include "rnvkit/preprocess.hpp"
#include "rnvkit/volume.hpp"

namespace rnvkit {

struct VriNetConfig {
    int stages = 3;
    int base_channels = 16;
    double alpha = 0.5;
    double lr = 1e-4;
    int batch_size = 2;
    int max_epochs = 1000;
    int patience = 20;
    /// B-scans drawn per training case each epoch; 0 uses every B-scan.
    int bscans_per_case = 0;
    /// Every k-th B-scan of the validation cases is scored.
    int val_bscan_stride = 1;
    double val_fraction = 0.2;
    bool augment = true;
    AugmentOptions augmentation{};

    void validate() const
    {
        if (stages < 2) throw ConfigError("vri-net: stages must be >= 2");
        if (base_channels < 1) throw ConfigError("vri-net: base_channels must be >= 1");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("vri-net: alpha must be in [0, 1]");
        if (!(lr > 0)) throw ConfigError("vri-net: lr must be > 0");
        if (batch_size < 1 || max_epochs < 1 || patience < 1) throw ConfigError("vri-net: batch/epochs/patience must be >= 1");
        if (bscans_per_case < 0 || val_bscan_stride < 1) throw ConfigError("vri-net: invalid B-scan sampling");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("vri-net: val_fraction must be in (0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const VriNetConfig& c)
{
    j = {{"stages", c.stages},
         {"base_channels", c.base_channels},
         {"alpha", c.alpha},
         {"lr", c.lr},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"patience", c.patience},
         {"bscans_per_case", c.bscans_per_case},
         {"val_bscan_stride", c.val_bscan_stride},
         {"val_fraction", c.val_fraction},
         {"augment", c.augment}};
}

inline void from_json(const nlohmann::json& j, VriNetConfig& c)
{
    const VriNetConfig d;
    c.stages = j.value("stages", d.stages);
    c.base_channels = j.value("base_channels", d.base_channels);
    c.alpha = j.value("alpha", d.alpha);
    c.lr = j.value("lr", d.lr);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.patience = j.value("patience", d.patience);
    c.bscans_per_case = j.value("bscans_per_case", d.bscans_per_case);
    c.val_bscan_stride = j.value("val_bscan_stride", d.val_bscan_stride);
    c.val_fraction = j.value("val_fraction", d.val_fraction);
    c.augment = j.value("augment", d.augment);
}

inline constexpr int kVriInputChannels = 6;

/// U-Net over a 6-channel B-scan triplet. Each encoder stage is a 3x3 conv
/// followed by a multi-scale fusion block, then 2x2 pooling; the decoder
/// upsamples, concatenates the skip, and applies a 3x3 conv. The head is a
/// 1x1 conv with a sigmoid giving P(retina) per pixel.
template <class T>
class VriNet {
public:
    explicit VriNet(const VriNetConfig& cfg) : cfg_(cfg)
    {
        cfg_.validate();
        int in = kVriInputChannels;
        for (int i = 0; i < cfg_.stages; ++i) {
            const int c = channels(i);
            const std::string p = "enc" + std::to_string(i);
            enc_.push_back({nn::Conv2dLayer<T>(p + ".conv", in, c, 3), {}, nn::MultiScaleFusion<T>(p + ".fuse", c, c, c), {}, {}});
            in = c;
        }
        bottleneck_ = nn::Conv2dLayer<T>("bottleneck.conv", in, channels(cfg_.stages), 3);
        int below = channels(cfg_.stages);
        dec_.resize(cfg_.stages);
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            const int c = channels(i);
            dec_[i] = {nn::Conv2dLayer<T>("dec" + std::to_string(i) + ".conv", below + c, c, 3), {}, below, c};
            below = c;
        }
        head_ = nn::Conv2dLayer<T>("head.conv", channels(0), 1, 1);
    }

    const VriNetConfig& config() const { return cfg_; }
    int channels(int level) const { return cfg_.base_channels << level; }
    int input_multiple() const { return 1 << cfg_.stages; }

    template <class Rng>
    void init(Rng& rng)
    {
        for (auto& e : enc_) {
            e.conv.init(rng);
            e.fuse.init(rng);
        }
        bottleneck_.init(rng);
        for (int i = cfg_.stages - 1; i >= 0; --i) dec_[i].conv.init(rng);
        head_.init(rng);
    }

    /// x: (N, 6, H, W) with H, W multiples of 2^stages. Returns (N, 1, H, W) probabilities.
    nn::Tensor<T> forward(const nn::Tensor<T>& x)
    {
        if (x.c() != kVriInputChannels)
            throw ShapeError("vri-net: expected 6 input channels, got " + std::to_string(x.c()));
        if (x.h() % input_multiple() || x.w() % input_multiple())
            throw ShapeError("vri-net: spatial dims must be multiples of " + std::to_string(input_multiple()));
        nn::Tensor<T> h = x;
        skips_.assign(cfg_.stages, {});
        for (int i = 0; i < cfg_.stages; ++i) {
            auto& e = enc_[i];
            h = e.act1.forward(e.conv.forward(h));
            h = e.act2.forward(e.fuse.forward(h));
            skips_[i] = h;
            h = e.pool.forward(h);
        }
        h = bottleneck_act_.forward(bottleneck_.forward(h));
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            const auto up = nn::upsample2(h);
            h = dec_[i].act.forward(dec_[i].conv.forward(nn::concat_channels<T>({&up, &skips_[i]})));
        }
        prob_ = nn::sigmoid(head_.forward(h));
        return prob_;
    }

    /// Accumulates parameter gradients given dLoss/dProbability.
    void backward(const nn::Tensor<T>& dprob)
    {
        nn::Tensor<T> dh = head_.backward(nn::sigmoid_backward(prob_, dprob));
        std::vector<nn::Tensor<T>> dskip(cfg_.stages);
        for (int i = 0; i < cfg_.stages; ++i) {
            auto& d = dec_[i];
            auto parts = nn::split_channels(d.conv.backward(d.act.backward(dh)), {d.up_channels, d.skip_channels});
            dskip[i] = std::move(parts[1]);
            dh = nn::upsample2_backward(parts[0]);
        }
        dh = bottleneck_.backward(bottleneck_act_.backward(dh));
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            auto& e = enc_[i];
            dh = e.pool.backward(dh);
            nn::add_inplace(dh, dskip[i]);
            dh = e.fuse.backward(e.act2.backward(dh));
            dh = e.conv.backward(e.act1.backward(dh), i > 0);
        }
    }

    nn::ParamRefs<T> parameters()
    {
        nn::ParamRefs<T> out;
        for (auto& e : enc_) {
            e.conv.collect(out);
            e.fuse.collect(out);
        }
        bottleneck_.collect(out);
        for (int i = cfg_.stages - 1; i >= 0; --i) dec_[i].conv.collect(out);
        head_.collect(out);
        return out;
    }

    std::vector<nn::LayerSpec> layer_specs() const
    {
        std::vector<nn::LayerSpec> out;
        for (int i = 0; i < cfg_.stages; ++i) {
            out.push_back(enc_[i].conv.spec());
            out.push_back(enc_[i].fuse.spec());
            out.push_back({"enc" + std::to_string(i) + ".pool", "maxpool", channels(i), channels(i), 2, 0});
        }
        out.push_back(bottleneck_.spec());
        for (int i = cfg_.stages - 1; i >= 0; --i) {
            out.push_back({"dec" + std::to_string(i) + ".up", "upsample", dec_[i].up_channels, dec_[i].up_channels, 2, 0});
            out.push_back({"dec" + std::to_string(i) + ".skip", "concat_skip", dec_[i].up_channels + dec_[i].skip_channels,
                           dec_[i].up_channels + dec_[i].skip_channels, 0, 0});
            out.push_back(dec_[i].conv.spec());
        }
        out.push_back(head_.spec());
        out.push_back({"head.sigmoid", "sigmoid_head", 1, 1, 0, 0});
        return out;
    }

    std::size_t param_count() { return nn::count_parameters(parameters()); }

    /// Parameter count from the layer formulas alone.
    static std::size_t analytic_param_count(const VriNetConfig& cfg)
    {
        std::size_t n = 0;
        int in = kVriInputChannels;
        for (int i = 0; i < cfg.stages; ++i) {
            const int c = cfg.base_channels << i;
            n += nn::conv_param_count(in, c, 3) + nn::multiscale_param_count(c, c, c);
            in = c;
        }
        int below = cfg.base_channels << cfg.stages;
        n += nn::conv_param_count(in, below, 3);
        for (int i = cfg.stages - 1; i >= 0; --i) {
            const int c = cfg.base_channels << i;
            n += nn::conv_param_count(below + c, c, 3);
            below = c;
        }
        return n + nn::conv_param_count(cfg.base_channels, 1, 1);
    }

    nn::Conv2dLayer<T>& first_conv() { return enc_.front().conv; }
    nn::MultiScaleFusion<T>& fusion(int stage) { return enc_.at(stage).fuse; }

private:
    struct Encoder {
        nn::Conv2dLayer<T> conv;
        nn::ReluCache<T> act1;
        nn::MultiScaleFusion<T> fuse;
        nn::ReluCache<T> act2;
        nn::PoolCache<T> pool;
    };
    struct Decoder {
        nn::Conv2dLayer<T> conv;
        nn::ReluCache<T> act;
        int up_channels = 0, skip_channels = 0;
    };

    VriNetConfig cfg_;
    std::vector<Encoder> enc_;
    nn::Conv2dLayer<T> bottleneck_;
    nn::ReluCache<T> bottleneck_act_;
    std::vector<Decoder> dec_;
    nn::Conv2dLayer<T> head_;
    std::vector<nn::Tensor<T>> skips_;
    nn::Tensor<T> prob_;
};

/// He-initialized network for a config.
template <class T = double>
VriNet<T> build_vri_net(const VriNetConfig& cfg, std::uint64_t seed)
{
    VriNet<T> net(cfg);
    std::mt19937_64 rng(seed);
    net.init(rng);
    return net;
}

// --- data preparation ---------------------------------------------------------

/// B-scans of one volume, each column z-scored and floored.
inline std::vector<ImageF> normalized_bscans(const Volume& v)
{
    std::vector<ImageF> out;
    out.reserve(v.bscans());
    for (int y = 0; y < v.bscans(); ++y) out.push_back(threshold_floor(column_zscore(bscan(v, y))));
    return out;
}

/// Normalized B-scans of an OCT/OCTA pair; triplets are assembled from these.
struct VriCaseInputs {
    std::vector<ImageF> oct, octa;

    VriCaseInputs() = default;
    VriCaseInputs(const Volume& v_oct, const Volume& v_octa)
    {
        if (!v_oct.same_shape(v_octa)) throw ShapeError("vri inputs: OCT/OCTA shape mismatch");
        oct = normalized_bscans(v_oct);
        octa = normalized_bscans(v_octa);
    }

    int bscans() const { return static_cast<int>(oct.size()); }

    /// Same channel order and edge replication as extract_triplet, on normalized B-scans.
    ImageStack triplet(int y) const
    {
        const int Y = bscans();
        ImageStack out;
        out.reserve(kVriInputChannels);
        for (const auto* src : {&oct, &octa})
            for (int dy = -1; dy <= 1; ++dy) out.push_back((*src)[std::clamp(y + dy, 0, Y - 1)]);
        return out;
    }
};

/// (Z, X) retina label image of B-scan y.
inline ImageF vri_target(const VriSurface& s, int y)
{
    ImageF t(s.depth, s.width(), 0.0f);
    for (int x = 0; x < s.width(); ++x)
        for (int z = s.z(x, y); z < s.depth; ++z) t(z, x) = 1.0f;
    return t;
}

namespace detail {

/// Losses over the un-padded window of each sample; gradient is zero in the padding.
template <class T>
SegLoss windowed_loss_s(const nn::Tensor<T>& prob, const std::vector<ImageF>& targets, double alpha, bool want_grad,
                        nn::Tensor<T>* grad)
{
    const int rows = targets.front().rows(), cols = targets.front().cols();
    std::vector<T> p, y;
    p.reserve(targets.size() * rows * cols);
    y.reserve(p.capacity());
    for (int n = 0; n < prob.n(); ++n)
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                p.push_back(prob(n, 0, r, c));
                y.push_back(static_cast<T>(targets[n](r, c)));
            }
    SegLoss l = loss_s<T>(p, y, alpha, want_grad);
    if (want_grad && grad) {
        *grad = nn::Tensor<T>(prob.shape());
        std::size_t k = 0;
        for (int n = 0; n < prob.n(); ++n)
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) (*grad)(n, 0, r, c) = static_cast<T>(l.grad[k++]);
    }
    return l;
}

} // namespace detail

// --- training ---------------------------------------------------------------

struct VriEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_bce = 0.0;
    double val_dice = 0.0;
};

struct VriTrainResult {
    VriNet<double> model;
    std::vector<VriEpochLog> log;
    int best_epoch = -1;
    bool stopped_early = false;
    std::vector<std::string> train_ids, val_ids;
};

inline std::string vri_log_csv(const std::vector<VriEpochLog>& log)
{
    std::string out = "epoch,train_loss,val_bce,val_dice\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_bce, e.val_dice);
        out += buf;
    }
    return out;
}

/// Case-level train/validation split of the manifest's training cases.
template <class Rng>
std::pair<std::vector<const CaseEntry*>, std::vector<const CaseEntry*>> split_train_val(const Manifest& m, double val_fraction,
                                                                                         Rng& rng)
{
    auto cases = m.split("train");
    if (cases.size() < 2) throw ConfigError("training needs at least 2 training cases in the manifest");
    std::shuffle(cases.begin(), cases.end(), rng);
    const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(val_fraction * cases.size())), 1,
                                               cases.size() - 1);
    std::vector<const CaseEntry*> val(cases.begin(), cases.begin() + n_val);
    std::vector<const CaseEntry*> train(cases.begin() + n_val, cases.end());
    auto by_id = [](const CaseEntry* a, const CaseEntry* b) { return a->id < b->id; };
    std::sort(train.begin(), train.end(), by_id);
    std::sort(val.begin(), val.end(), by_id);
    return {train, val};
}

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

struct VriCase {
    std::string id;
    VriCaseInputs inputs;
    VriSurface truth;
};

/// Validation losses (BCE, Dice, composite) averaged over scored B-scans.
inline SegLoss evaluate_vri(VriNet<double>& net, const std::vector<VriCase>& cases, int stride, int batch_size, double alpha)
{
    double bce = 0.0, dice = 0.0, total = 0.0;
    int count = 0;
    for (const auto& vc : cases) {
        std::vector<int> ys;
        for (int y = 0; y < vc.inputs.bscans(); y += stride) ys.push_back(y);
        for (std::size_t b = 0; b < ys.size(); b += batch_size) {
            std::vector<ImageStack> batch;
            std::vector<ImageF> targets;
            for (std::size_t k = b; k < std::min(ys.size(), b + batch_size); ++k) {
                batch.push_back(vc.inputs.triplet(ys[k]));
                targets.push_back(vri_target(vc.truth, ys[k]));
            }
            const auto prob = net.forward(nn::pack_batch<double>(batch, net.input_multiple()));
            for (std::size_t k = 0; k < batch.size(); ++k) {
                nn::Tensor<double> one(1, 1, prob.h(), prob.w());
                std::copy_n(prob.ptr(static_cast<int>(k)), prob.plane(), one.ptr());
                const auto l = detail::windowed_loss_s<double>(one, {targets[k]}, alpha, false, nullptr);
                bce += l.bce;
                dice += l.dice;
                total += l.value;
                ++count;
            }
        }
    }
    SegLoss out;
    if (count > 0) {
        out.bce = bce / count;
        out.dice = dice / count;
        out.value = total / count;
    }
    return out;
}

/// Trains the VRI network on the manifest's training split. Early stopping
/// monitors the validation Dice loss; the best-validation weights are returned.
inline VriTrainResult train_vri(const Manifest& m, const VriNetConfig& cfg, std::uint64_t seed,
                                const EpochCallback& on_epoch = {})
{
    cfg.validate();
    if (m.cases.empty()) throw ConfigError("train_vri: empty manifest");
    std::mt19937_64 rng(seed);
    VriTrainResult result{build_vri_net<double>(cfg, seed), {}, -1, false, {}, {}};
    auto [train_cases, val_cases] = split_train_val(m, cfg.val_fraction, rng);

    auto load = [&](const std::vector<const CaseEntry*>& entries, std::vector<std::string>& ids) {
        std::vector<VriCase> out;
        for (const auto* e : entries) {
            const auto c = load_case(m, *e);
            out.push_back({e->id, VriCaseInputs(c.oct, c.octa), c.vri});
            ids.push_back(e->id);
        }
        return out;
    };
    const auto train = load(train_cases, result.train_ids);
    const auto val = load(val_cases, result.val_ids);

    auto& net = result.model;
    auto params = net.parameters();
    nn::AdamState<double> adam(params, {cfg.lr});
    nn::EarlyStopping stopper{cfg.patience};
    std::vector<nn::Tensor<double>> best_values;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<std::pair<int, int>> samples;
        for (int ci = 0; ci < static_cast<int>(train.size()); ++ci) {
            std::vector<int> ys(train[ci].inputs.bscans());
            for (int y = 0; y < static_cast<int>(ys.size()); ++y) ys[y] = y;
            if (cfg.bscans_per_case > 0 && cfg.bscans_per_case < static_cast<int>(ys.size())) {
                std::shuffle(ys.begin(), ys.end(), rng);
                ys.resize(cfg.bscans_per_case);
            }
            for (int y : ys) samples.emplace_back(ci, y);
        }
        std::shuffle(samples.begin(), samples.end(), rng);
        double train_loss = 0.0;
        int steps = 0;
        for (std::size_t b = 0; b < samples.size(); b += cfg.batch_size) {
            std::vector<ImageStack> batch;
            std::vector<ImageF> targets;
            for (std::size_t k = b; k < std::min(samples.size(), b + cfg.batch_size); ++k) {
                const auto& [ci, y] = samples[k];
                batch.push_back(train[ci].inputs.triplet(y));
                targets.push_back(vri_target(train[ci].truth, y));
            }
            if (cfg.augment) augment(batch, rng, cfg.augmentation);
            const auto prob = net.forward(nn::pack_batch<double>(batch, net.input_multiple()));
            nn::Tensor<double> grad;
            const auto l = detail::windowed_loss_s(prob, targets, cfg.alpha, true, &grad);
            nn::zero_grads(params);
            net.backward(grad);
            nn::adam_step(params, adam);
            train_loss += l.value;
            ++steps;
        }
        const auto v = evaluate_vri(net, val, cfg.val_bscan_stride, cfg.batch_size, cfg.alpha);
        result.log.push_back({epoch, steps ? train_loss / steps : 0.0, v.bce, v.dice});
        if (on_epoch) on_epoch(epoch, result.log.back().train_loss, v.dice);
        if (stopper.update(v.dice, epoch)) {
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

// --- checkpoints ----------------------------------------------------------------

inline void save_vri_checkpoint(VriNet<double>& net, const std::filesystem::path& path)
{
    nn::save_checkpoint(path, "vri", nlohmann::json(net.config()), net.layer_specs(), net.parameters());
}

template <class T = float>
VriNet<T> vri_net_from_checkpoint(const nn::Checkpoint& ck)
{
    if (ck.model() != "vri") throw FormatError("checkpoint holds a '" + ck.model() + "' model, expected 'vri'");
    VriNet<T> net(ck.config().get<VriNetConfig>());
    nn::assign_parameters(ck, net.parameters());
    return net;
}

template <class T = float>
VriNet<T> load_vri_net(const std::filesystem::path& path)
{
    return vri_net_from_checkpoint<T>(nn::load_checkpoint(path));
}

// --- inference ------------------------------------------------------------------

struct VriInference {
    Volume probability; ///< P(retina), modality Probability, same shape as the input
    VriMask mask;       ///< probability >= 0.5
    VriSurface surface; ///< optimal step fit of the mask
};

inline constexpr float kVriThreshold = 0.5f;

/// Runs every B-scan triplet through the network, binarizes at 0.5 and fits
/// the surface. B-scans are distributed over `workers` model copies.
template <class T>
VriInference infer_vri(const Volume& oct, const Volume& octa, const VriNet<T>& net, int workers = 1)
{
    if (!oct.same_shape(octa)) throw ShapeError("infer_vri: OCT/OCTA shape mismatch");
    const VriCaseInputs inputs(oct, octa);
    const int Z = oct.depth(), X = oct.width(), Y = oct.bscans();
    Spacing sp = oct.spacing();
    VriInference out{Volume(Z, X, Y, sp, Modality::Probability), VriMask{Z, X, Y, {}}, {}};
    out.mask.labels.assign(static_cast<std::size_t>(Z) * X * Y, 0);
    workers = std::clamp(workers, 1, Y);
    std::vector<VriNet<T>> copies(workers, net);
    // Each worker owns a contiguous block of B-scans so model copies never race.
    const int block = (Y + workers - 1) / workers;
    parallel_for(workers, workers, [&](int w) {
        auto& model = copies[w];
        for (int y = w * block; y < std::min(Y, (w + 1) * block); ++y) {
            const auto prob = model.forward(nn::pack_batch<T>({inputs.triplet(y)}, model.input_multiple()));
            for (int x = 0; x < X; ++x)
                for (int z = 0; z < Z; ++z) {
                    const float p = static_cast<float>(prob(0, 0, z, x));
                    out.probability.at(z, x, y) = p;
                    out.mask.at(z, x, y) = p >= kVriThreshold ? 1 : 0;
                }
        }
    });
    out.surface = mask_to_surface(out.mask);
    return out;
}

} // namespace rnvkit
