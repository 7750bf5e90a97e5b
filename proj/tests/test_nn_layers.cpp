#include <gtest/gtest.h>

#include <random>

#include "rnvkit/nn/checkpoint.hpp"
#include "rnvkit/nn/gradcheck.hpp"
#include "rnvkit/nn/layers.hpp"
#include "rnvkit/nn/train_util.hpp"
#include "test_support.hpp"

using namespace rnvkit;
using namespace rnvkit::nn;
using testing_support::TempDir;

namespace {

using TD = Tensor<double>;

TD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    TD t(s);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

double dot(const TD& a, const TD& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

TEST(Layers, ParamCountsMatchTensorSizes)
{
    Conv2dLayer<double> conv("c", 3, 5, 3);
    DepthwiseSepLayer<double> ds("d", 8, 16, 3);
    SeLayer<double> se("s", 8, 4);
    MultiScaleFusion<double> msf("m", 4, 2, 3);
    auto total = [](auto& layer) {
        ParamRefs<double> refs;
        layer.collect(refs);
        return count_parameters(refs);
    };
    EXPECT_EQ(total(conv), conv.param_count());
    EXPECT_EQ(conv.param_count(), 5u * 3 * 9 + 5);
    EXPECT_EQ(total(ds), 216u);
    EXPECT_EQ(total(se), 2u * 8 * 2);
    EXPECT_EQ(total(msf), msf.param_count());
    EXPECT_EQ(msf.param_count(), (4u * 2 + 2) + (4u * 2 * 9 + 2) + (4u * 2 * 25 + 2) + (6u * 3 + 3));
}

TEST(Layers, SeRejectsIndivisibleChannels)
{
    EXPECT_THROW(SeLayer<double>("s", 6, 4), ConfigError);
    EXPECT_THROW(SeLayer<double>("s", 8, 0), ConfigError);
    EXPECT_NO_THROW(SeLayer<double>("s", 8, 4));
}

TEST(Layers, ConvRejectsEvenKernel) { EXPECT_THROW(Conv2dLayer<double>("c", 2, 2, 2), ConfigError); }

TEST(Layers, SeOutputShapeEqualsInput)
{
    std::mt19937_64 rng(1);
    SeLayer<double> se("s", 8, 4);
    se.init(rng);
    const auto x = random_tensor({3, 8, 5, 7}, rng);
    EXPECT_EQ(se.forward(x).shape(), x.shape());
}

TEST(Layers, GradientsAccumulateAcrossBackwardCalls)
{
    std::mt19937_64 rng(2);
    Conv2dLayer<double> conv("c", 2, 3, 3);
    conv.init(rng);
    const auto x = random_tensor({1, 2, 4, 4}, rng);
    const auto r = random_tensor({1, 3, 4, 4}, rng);
    conv.forward(x);
    conv.backward(r);
    const auto once = conv.weight.grad;
    conv.forward(x);
    conv.backward(r);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(conv.weight.grad[i], 2.0 * once[i], 1e-12);
    ParamRefs<double> refs;
    conv.collect(refs);
    zero_grads(refs);
    for (double g : conv.weight.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(MultiScale, NonNegativeWeightsCollapseToOneConv)
{
    // with non-negative inputs and weights the inner relu is inactive, so the
    // block is a single 5x5 conv whose kernel is the mix-weighted sum of the branches
    std::mt19937_64 rng(3);
    MultiScaleFusion<double> msf("m", 2, 1, 1);
    ParamRefs<double> refs;
    msf.collect(refs);
    for (auto* p : refs) p->value = random_tensor(p->value.shape(), rng, 0.0, 1.0);
    const auto x = random_tensor({1, 2, 6, 6}, rng, 0.0, 1.0);
    TD w(1, 2, 5, 5), b(1, 1, 1, 1);
    const double m1 = msf.mix.weight.value(0, 0, 0, 0), m3 = msf.mix.weight.value(0, 1, 0, 0),
                 m5 = msf.mix.weight.value(0, 2, 0, 0);
    for (int c = 0; c < 2; ++c) {
        w(0, c, 2, 2) += m1 * msf.k1.weight.value(0, c, 0, 0);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) w(0, c, i + 1, j + 1) += m3 * msf.k3.weight.value(0, c, i, j);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) w(0, c, i, j) += m5 * msf.k5.weight.value(0, c, i, j);
    }
    b[0] = msf.mix.bias.value[0] + m1 * msf.k1.bias.value[0] + m3 * msf.k3.bias.value[0] + m5 * msf.k5.bias.value[0];
    const auto y = msf.forward(x), ref = conv2d(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(MultiScale, IdenticalBranchesEqualOneBranch)
{
    std::mt19937_64 rng(4);
    MultiScaleFusion<double> msf("m", 3, 1, 1);
    msf.init(rng);
    // zero 1x1 and 5x5 branches, mix picks only the 3x3 branch
    msf.k1.weight.value.fill(0.0);
    msf.k5.weight.value.fill(0.0);
    msf.mix.weight.value.fill(0.0);
    msf.mix.weight.value(0, 1, 0, 0) = 1.0;
    const auto x = random_tensor({2, 3, 5, 5}, rng);
    const auto y = msf.forward(x);
    const auto ref = relu(conv2d(x, msf.k3.weight.value, msf.k3.bias.value));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(MultiScale, GradientsMatchFiniteDifferences)
{
    std::mt19937_64 rng(5);
    MultiScaleFusion<double> msf("m", 2, 2, 3);
    msf.init(rng);
    auto x = random_tensor({1, 2, 5, 5}, rng);
    const auto r = random_tensor({1, 3, 5, 5}, rng);
    ParamRefs<double> refs;
    msf.collect(refs);
    zero_grads(refs);
    msf.forward(x);
    const auto dx = msf.backward(r);
    auto loss = [&] { return dot(msf.forward(x), r); };
    std::vector<double> gx(dx.data().begin(), dx.data().end());
    EXPECT_LT(grad_check(loss, x.data(), gx).max_rel_error, 1e-6);
    for (auto* p : refs) {
        std::vector<double> g(p->grad.data().begin(), p->grad.data().end());
        EXPECT_LT(grad_check(loss, p->value.data(), g).max_rel_error, 1e-6) << p->name;
    }
}

TEST(Checkpoint, RoundTripIsBitwise)
{
    TempDir dir("ckpt");
    std::mt19937_64 rng(6);
    Conv2dLayer<double> conv("enc.conv", 2, 4, 3);
    SeLayer<double> se("enc.se", 4, 2);
    conv.init(rng);
    se.init(rng);
    ParamRefs<double> refs;
    conv.collect(refs);
    se.collect(refs);
    const nlohmann::json cfg = {{"stages", 2}};
    save_checkpoint(dir / "m.ckpt", "toy", cfg, {conv.spec(), se.spec()}, refs);
    const auto ck = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(ck.model(), "toy");
    EXPECT_EQ(ck.config(), cfg);
    EXPECT_EQ(ck.header.at("layers").size(), 2u);

    Conv2dLayer<double> conv2("enc.conv", 2, 4, 3);
    SeLayer<double> se2("enc.se", 4, 2);
    ParamRefs<double> refs2;
    conv2.collect(refs2);
    se2.collect(refs2);
    assign_parameters(ck, refs2);
    for (std::size_t k = 0; k < refs.size(); ++k) EXPECT_EQ(refs[k]->value, refs2[k]->value);
    // saving the loaded model reproduces the file byte for byte
    save_checkpoint(dir / "m2.ckpt", "toy", cfg, {conv2.spec(), se2.spec()}, refs2);
    EXPECT_EQ(rnvkit::detail::read_file_bytes(dir / "m.ckpt"), rnvkit::detail::read_file_bytes(dir / "m2.ckpt"));
}

TEST(Checkpoint, CorruptionDetected)
{
    std::mt19937_64 rng(7);
    Conv2dLayer<double> conv("c", 1, 2, 3);
    conv.init(rng);
    ParamRefs<double> refs;
    conv.collect(refs);
    const auto bytes = encode_checkpoint("toy", nlohmann::json::object(), {conv.spec()}, refs);
    EXPECT_NO_THROW(decode_checkpoint(bytes));

    auto flipped = bytes;
    flipped.back() = static_cast<char>(flipped.back() ^ 0x01);
    EXPECT_THROW(decode_checkpoint(flipped), FormatError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), FormatError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
    EXPECT_THROW(decode_checkpoint("RNVCKPT1"), FormatError);
}

TEST(Checkpoint, MismatchedModelRejected)
{
    Conv2dLayer<double> a("c", 1, 2, 3), b("c", 1, 3, 3), c("other", 1, 2, 3);
    ParamRefs<double> ra, rb, rc;
    a.collect(ra);
    b.collect(rb);
    c.collect(rc);
    const auto ck = decode_checkpoint(encode_checkpoint("toy", nlohmann::json::object(), {a.spec()}, ra));
    EXPECT_THROW(assign_parameters(ck, rb), FormatError);
    EXPECT_THROW(assign_parameters(ck, rc), FormatError);
}

TEST(PackBatch, PadsByReplication)
{
    ImageF a(3, 2), b(3, 2);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) {
            a(r, c) = static_cast<float>(10 * r + c);
            b(r, c) = -a(r, c);
        }
    const auto t = pack_batch<double>({{a}, {b}}, 4);
    EXPECT_EQ(t.shape(), (Shape{2, 1, 4, 4}));
    EXPECT_EQ(t(0, 0, 3, 3), a(2, 1));
    EXPECT_EQ(t(0, 0, 1, 3), a(1, 1));
    EXPECT_EQ(t(1, 0, 3, 0), b(2, 0));
    const auto back = unpack_plane(t, 1, 3, 2);
    EXPECT_EQ(back, b);
}

TEST(PackBatch, RejectsRaggedInput)
{
    EXPECT_THROW(pack_batch<double>({}), ShapeError);
    EXPECT_THROW(pack_batch<double>({{ImageF(2, 2)}, {ImageF(3, 2)}}), ShapeError);
    EXPECT_THROW(pack_batch<double>({{ImageF(2, 2)}, {ImageF(2, 2), ImageF(2, 2)}}), ShapeError);
}

TEST(EarlyStoppingRule, StopsPatienceEpochsAfterBest)
{
    EarlyStopping es{3};
    const double vals[] = {1.0, 0.8, 0.9, 0.85, 0.81, 0.95};
    int stopped = -1;
    for (int e = 0; e < 6; ++e) {
        es.update(vals[e], e);
        if (es.should_stop(e)) {
            stopped = e;
            break;
        }
    }
    EXPECT_EQ(es.best_epoch, 1);
    EXPECT_EQ(stopped, 4);
}
