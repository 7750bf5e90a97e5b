#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rnvkit/dataset.hpp"
#include "rnvkit/losses.hpp"
#include "rnvkit/nn/gradcheck.hpp"
#include "rnvkit/vri_net.hpp"
#include "test_support.hpp"

using namespace rnvkit;
using testing_support::TempDir;

namespace {

// Straight transcription of BCE + soft Dice with the probability clamp.
double oracle_loss_s(const std::vector<double>& p, const std::vector<double>& y, double alpha)
{
    const double lo = 1e-7, hi = 1.0 - 1e-7, eps = 1e-6;
    double bce = 0.0, inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double q = p[i];
        if (q < lo) q = lo;
        if (q > hi) q = hi;
        bce += -(y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q));
        inter += q * y[i];
        sp += q;
        sy += y[i];
    }
    bce /= static_cast<double>(p.size());
    const double dice = 1.0 - (2 * inter + eps) / (sp + sy + eps);
    return alpha * bce + (1 - alpha) * dice;
}

VriNetConfig tiny_config()
{
    VriNetConfig c;
    c.stages = 2;
    c.base_channels = 4;
    c.batch_size = 2;
    c.max_epochs = 3;
    c.val_bscan_stride = 2;
    return c;
}

Manifest tiny_dataset(const std::filesystem::path& dir, int n_train = 4)
{
    DatasetConfig d;
    d.base.depth = 32;
    d.base.width = 32;
    d.base.bscans = 20;
    d.base.lesion_radius_min = 4.0;
    d.base.lesion_radius_max = 4.5;
    d.max_lesions = 1;
    d.artifact_rate = 0.0;
    d.base.artifacts.decorrelation_noise = 0.3;
    d.n_train = n_train;
    d.n_test = 1;
    d.seed = 5;
    return generate_dataset(d, dir);
}

} // namespace

TEST(LossS, PerfectPredictionIsNearZero)
{
    const std::vector<double> y{1, 0, 1, 1, 0, 0};
    const auto l = loss_s<double>(y, y, 0.5, false);
    EXPECT_LE(l.bce, 1e-5);
    EXPECT_LE(l.dice, 1e-5);
}

TEST(LossS, HandComputedAnchor)
{
    const std::vector<double> p(4, 0.5), y(4, 1.0);
    const auto l = loss_s<double>(p, y, 0.5, false);
    EXPECT_NEAR(l.bce, std::log(2.0), 1e-12);
    EXPECT_NEAR(l.dice, 1.0 - (4.0 + 1e-6) / (6.0 + 1e-6), 1e-12);
    EXPECT_NEAR(l.value, 0.5132, 5e-5);
}

TEST(LossS, MatchesScalarOracleOnRandomPairs)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> len(1, 40);
    for (int t = 0; t < 1000; ++t) {
        const int n = len(rng);
        std::vector<double> p(n), y(n);
        for (int i = 0; i < n; ++i) {
            p[i] = u(rng);
            y[i] = u(rng) < 0.5 ? 1.0 : 0.0;
        }
        if (t % 50 == 0) p[0] = 0.0; // exercise the clamp
        const double alpha = u(rng);
        EXPECT_NEAR(loss_s<double>(p, y, alpha, false).value, oracle_loss_s(p, y, alpha), 1e-12);
    }
}

TEST(LossS, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<double> p(12), y(12);
    for (int i = 0; i < 12; ++i) {
        p[i] = u(rng);
        y[i] = i % 3 == 0;
    }
    const auto l = loss_s<double>(p, y, 0.3);
    const auto rep = nn::grad_check([&] { return loss_s<double>(p, y, 0.3, false).value; }, p, l.grad);
    EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(LossS, Errors)
{
    const std::vector<double> a(3, 0.5), b(4, 1.0);
    EXPECT_THROW(loss_s<double>(a, b), ShapeError);
    EXPECT_THROW(loss_s<double>(a, a, 1.5), ConfigError);
}

TEST(VriNetModel, DefaultConfigExpectsSixChannels)
{
    VriNetConfig cfg;
    EXPECT_EQ(cfg.alpha, 0.5);
    EXPECT_EQ(cfg.batch_size, 2);
    EXPECT_EQ(cfg.patience, 20);
    EXPECT_EQ(cfg.max_epochs, 1000);
    EXPECT_EQ(cfg.lr, 1e-4);
    auto net = build_vri_net<double>(cfg, 1);
    EXPECT_EQ(net.first_conv().spec().in_channels, 6);
    EXPECT_EQ(net.first_conv().weight.value.c(), 6);
    EXPECT_THROW(net.forward(nn::Tensor<double>(1, 5, 8, 8)), ShapeError);
}

TEST(VriNetModel, ParamCountMatchesAnalyticSum)
{
    for (auto [stages, base] : {std::pair{2, 4}, {3, 8}, {3, 16}, {4, 2}}) {
        VriNetConfig cfg;
        cfg.stages = stages;
        cfg.base_channels = base;
        VriNet<double> net(cfg);
        EXPECT_EQ(net.param_count(), VriNet<double>::analytic_param_count(cfg));
    }
}

TEST(VriNetModel, InvalidConfigRejected)
{
    VriNetConfig cfg;
    cfg.stages = 1;
    EXPECT_THROW(VriNet<double>{cfg}, ConfigError);
    cfg = {};
    cfg.alpha = -0.1;
    EXPECT_THROW(VriNet<double>{cfg}, ConfigError);
}

TEST(VriNetModel, FullNetworkGradientCheck)
{
    auto net = build_vri_net<double>(tiny_config(), 3);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    nn::Tensor<double> x(2, 6, 8, 8);
    for (auto& v : x.data()) v = g(rng);
    std::vector<ImageF> targets(2, ImageF(8, 8));
    for (auto& t : targets)
        for (int r = 4; r < 8; ++r)
            for (int c = 0; c < 8; ++c) t(r, c) = 1.0f;
    auto loss = [&] { return detail::windowed_loss_s<double>(net.forward(x), targets, 0.5, false, nullptr).value; };
    auto params = net.parameters();
    // He init leaves biases at exactly 0, which parks all-zero receptive fields on a relu kink
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto* p : params)
        if (p->name.ends_with(".bias"))
            for (auto& v : p->value.data()) v = u(rng);
    nn::zero_grads(params);
    nn::Tensor<double> grad;
    detail::windowed_loss_s<double>(net.forward(x), targets, 0.5, true, &grad);
    net.backward(grad);
    nn::GradCheckOptions opt;
    opt.samples = 40;
    for (auto* p : params) {
        std::vector<double> a(p->grad.data().begin(), p->grad.data().end());
        EXPECT_LT(nn::grad_check(loss, p->value.data(), a, opt).max_rel_error, 1e-4) << p->name;
    }
}

TEST(VriNetModel, UntrainedOutputIsProbabilityField)
{
    auto net = build_vri_net<float>(tiny_config(), 5);
    std::mt19937_64 rng(6);
    auto oct = testing_support::random_volume(20, 12, 4, rng);
    auto octa = testing_support::random_volume(20, 12, 4, rng, Modality::OCTA);
    const auto r = infer_vri(oct, octa, net);
    EXPECT_EQ(r.probability.depth(), 20);
    EXPECT_EQ(r.probability.width(), 12);
    EXPECT_EQ(r.probability.bscans(), 4);
    EXPECT_EQ(r.probability.modality(), Modality::Probability);
    for (float p : r.probability.data()) ASSERT_TRUE(p > 0.0f && p < 1.0f);
    EXPECT_EQ(r.surface.depth, 20);
    EXPECT_EQ(r.surface, mask_to_surface(r.mask));
}

TEST(VriNetModel, InferenceIsDeterministicAcrossWorkers)
{
    auto net = build_vri_net<float>(tiny_config(), 7);
    std::mt19937_64 rng(8);
    auto oct = testing_support::random_volume(16, 16, 5, rng);
    auto octa = testing_support::random_volume(16, 16, 5, rng, Modality::OCTA);
    const auto a = infer_vri(oct, octa, net), b = infer_vri(oct, octa, net), c = infer_vri(oct, octa, net, 3);
    EXPECT_EQ(a.probability, b.probability);
    EXPECT_EQ(a.probability, c.probability);
    EXPECT_EQ(a.surface, c.surface);
    auto wrong = testing_support::random_volume(16, 16, 4, rng, Modality::OCTA);
    EXPECT_THROW(infer_vri(oct, wrong, net), ShapeError);
}

TEST(VriNetModel, TargetMarksRetinaBelowSurface)
{
    VriSurface s{5, Image2D<std::int32_t>(2, 1)};
    s.z(0, 0) = 2;
    s.z(1, 0) = 5;
    const auto t = vri_target(s, 0);
    EXPECT_EQ(t.rows(), 5);
    for (int z = 0; z < 5; ++z) {
        EXPECT_EQ(t(z, 0), z >= 2 ? 1.0f : 0.0f);
        EXPECT_EQ(t(z, 1), 0.0f);
    }
}

TEST(VriTraining, SameSeedSameLogAndCheckpoint)
{
    TempDir dir("vri_train");
    const auto m = tiny_dataset(dir.path());
    const auto cfg = tiny_config();
    auto a = train_vri(m, cfg, 11), b = train_vri(m, cfg, 11);
    EXPECT_EQ(vri_log_csv(a.log), vri_log_csv(b.log));
    EXPECT_EQ(a.train_ids, b.train_ids);
    EXPECT_EQ(a.val_ids.size(), 1u);
    save_vri_checkpoint(a.model, dir / "a.ckpt");
    save_vri_checkpoint(b.model, dir / "b.ckpt");
    EXPECT_EQ(rnvkit::detail::read_file_bytes(dir / "a.ckpt"), rnvkit::detail::read_file_bytes(dir / "b.ckpt"));
}

TEST(VriTraining, PatienceHonoredOnPlateau)
{
    TempDir dir("vri_patience");
    const auto m = tiny_dataset(dir.path(), 3);
    auto cfg = tiny_config();
    cfg.lr = 1e-300; // updates vanish in floating point, so validation is flat
    cfg.augment = false;
    cfg.patience = 2;
    cfg.max_epochs = 50;
    const auto r = train_vri(m, cfg, 1);
    EXPECT_TRUE(r.stopped_early);
    EXPECT_EQ(r.best_epoch, 1);
    EXPECT_LE(static_cast<int>(r.log.size()) - r.best_epoch, cfg.patience);
    EXPECT_EQ(r.log.size(), 3u);
}

TEST(VriTraining, LossDecreases)
{
    TempDir dir("vri_smoke");
    const auto m = tiny_dataset(dir.path());
    auto cfg = tiny_config();
    cfg.lr = 3e-3;
    cfg.max_epochs = 12;
    cfg.patience = 12;
    const auto r = train_vri(m, cfg, 2);
    ASSERT_EQ(r.log.size(), 12u);
    EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(VriTraining, TooFewCasesRejected)
{
    Manifest empty;
    EXPECT_THROW(train_vri(empty, tiny_config(), 1), ConfigError);
    TempDir dir("vri_one");
    const auto m = tiny_dataset(dir.path(), 1);
    EXPECT_THROW(train_vri(m, tiny_config(), 1), ConfigError);
}

TEST(VriCheckpoint, RoundTripPreservesPredictions)
{
    TempDir dir("vri_ckpt");
    auto net = build_vri_net<double>(tiny_config(), 9);
    save_vri_checkpoint(net, dir / "v.ckpt");
    auto loaded = load_vri_net<double>(dir / "v.ckpt");
    EXPECT_EQ(nlohmann::json(loaded.config()), nlohmann::json(net.config()));
    std::mt19937_64 rng(10);
    nn::Tensor<double> x(1, 6, 8, 8);
    std::normal_distribution<double> g;
    for (auto& v : x.data()) v = g(rng);
    EXPECT_EQ(net.forward(x), loaded.forward(x));
    nn::save_checkpoint(dir / "r.ckpt", "rnv", nlohmann::json(net.config()), net.layer_specs(), net.parameters());
    EXPECT_THROW(load_vri_net<double>(dir / "r.ckpt"), FormatError);
}
