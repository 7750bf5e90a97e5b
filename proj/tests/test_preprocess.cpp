#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "rnvkit/preprocess.hpp"

using namespace rnvkit;

namespace {

// Always emits its maximum, so every uniform draw lands at the top of [0, 1).
struct SaturatedRng {
    using result_type = std::uint32_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return max(); }
};

ImageF column(std::initializer_list<float> v)
{
    ImageF img(static_cast<int>(v.size()), 1);
    int r = 0;
    for (float f : v) img(r++, 0) = f;
    return img;
}

} // namespace

TEST(ColumnZscore, TwoPointColumn)
{
    const auto out = column_zscore(column({1.0f, 3.0f}));
    EXPECT_FLOAT_EQ(out(0, 0), -1.0f);
    EXPECT_FLOAT_EQ(out(1, 0), 1.0f);
}

TEST(ColumnZscore, ConstantColumnBecomesZero)
{
    const auto out = column_zscore(column({5.0f, 5.0f, 5.0f}));
    for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ColumnZscore, RandomImageColumnsAreStandardized)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3.0, 7.0);
    ImageD img(64, 64);
    for (auto& v : img.data()) v = u(rng);
    const auto out = column_zscore(img);
    for (int c = 0; c < 64; ++c) {
        double mean = 0.0, sq = 0.0;
        for (int r = 0; r < 64; ++r) mean += out(r, c);
        mean /= 64;
        for (int r = 0; r < 64; ++r) sq += (out(r, c) - mean) * (out(r, c) - mean);
        EXPECT_LT(std::abs(mean), 1e-5);
        EXPECT_LT(std::abs(std::sqrt(sq / 64) - 1.0), 1e-4);
    }
}

TEST(ColumnZscore, RowsAreNotMixed)
{
    // columns are independent: changing one column leaves the others alone
    ImageF a(4, 2), b(4, 2);
    for (int r = 0; r < 4; ++r) {
        a(r, 0) = b(r, 0) = static_cast<float>(r * r);
        a(r, 1) = static_cast<float>(r);
        b(r, 1) = static_cast<float>(10 - 3 * r);
    }
    const auto oa = column_zscore(a), ob = column_zscore(b);
    for (int r = 0; r < 4; ++r) EXPECT_EQ(oa(r, 0), ob(r, 0));
}

TEST(ThresholdFloor, StrictlyBelowOnly)
{
    const auto out = threshold_floor(column({-1.0f, -0.5f, 0.2f}));
    EXPECT_EQ(out(0, 0), 0.0f);
    EXPECT_EQ(out(1, 0), -0.5f);
    EXPECT_EQ(out(2, 0), 0.2f);
}

TEST(ThresholdFloor, ZerosStayZero)
{
    const ImageF z(3, 5, 0.0f);
    EXPECT_EQ(threshold_floor(z), z);
}

TEST(NormalizeStack, EachChannelIndependently)
{
    ImageStack s{column({1.0f, 3.0f}), column({2.0f, 2.0f})};
    const auto out = normalize_stack(s);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0](0, 0), 0.0f); // -1 floored
    EXPECT_FLOAT_EQ(out[0](1, 0), 1.0f);
    EXPECT_EQ(out[1](0, 0), 0.0f);
}

TEST(Augment, NoSelectionLeavesBatchUnchanged)
{
    std::vector<ImageStack> batch{{column({0.3f, 0.7f}), column({1.0f, 2.0f})}};
    const auto before = batch;
    SaturatedRng rng;
    augment(batch, rng);
    EXPECT_EQ(batch[0][0], before[0][0]);
    EXPECT_EQ(batch[0][1], before[0][1]);
}

TEST(Augment, UnitBrightnessAndZeroNoiseIsIdentity)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<ImageStack> batch(4, ImageStack(3, ImageF(8, 8)));
    for (auto& s : batch)
        for (auto& ch : s)
            for (auto& v : ch.data()) v = u(rng);
    const auto before = batch;
    AugmentOptions opt;
    opt.probability = 1.0;
    opt.brightness_low = opt.brightness_high = 1.0;
    opt.noise_sigma = 0.0;
    augment(batch, rng, opt);
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(batch[i][c], before[i][c]);
}

TEST(Augment, ColumnNoiseVarianceMatchesSigma)
{
    std::mt19937_64 rng(2024);
    AugmentOptions opt;
    opt.probability = 1.0;
    std::vector<ImageStack> batch(10000, ImageStack{ImageF(4, 3, 0.0f)});
    augment(batch, rng, opt);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : batch) {
        const auto& ch = s[0];
        for (int c = 0; c < ch.cols(); ++c) {
            // one offset per column
            for (int r = 1; r < ch.rows(); ++r) ASSERT_EQ(ch(r, c), ch(0, c));
            sum += ch(0, c);
            sq += double(ch(0, c)) * ch(0, c);
            ++n;
        }
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    EXPECT_NEAR(var, 0.01, 0.001);
}

TEST(Augment, BrightnessSharedAcrossChannels)
{
    std::mt19937_64 rng(3);
    AugmentOptions opt;
    opt.probability = 1.0;
    opt.noise_sigma = 0.0;
    std::vector<ImageStack> batch(200, ImageStack{ImageF(2, 2, 1.0f), ImageF(2, 2, 2.0f)});
    augment(batch, rng, opt);
    for (const auto& s : batch) {
        const float k = s[0](0, 0);
        EXPECT_GE(k, 0.8f);
        EXPECT_LE(k, 1.2f);
        EXPECT_FLOAT_EQ(s[1](1, 1), 2.0f * k);
    }
}

TEST(Augment, SameSeedSameResult)
{
    auto make = [] { return std::vector<ImageStack>(5, ImageStack{ImageF(6, 6, 0.5f)}); };
    auto a = make(), b = make();
    std::mt19937_64 r1(9), r2(9);
    augment(a, r1);
    augment(b, r2);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i][0], b[i][0]);
}
