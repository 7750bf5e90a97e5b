#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "rnvkit/metrics.hpp"
#include "test_support.hpp"

using namespace rnvkit;

namespace {

ImageU8 grid_mask(int bits)
{
    ImageU8 m(3, 3, 0);
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = (bits >> i) & 1;
    return m;
}

// AUC by counting every positive/negative pair
double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& l)
{
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (l[i] && !l[j]) {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return wins / pairs;
}

} // namespace

TEST(PrecisionRecallF1, HandEvaluatedCounts)
{
    const auto r = precision_recall_f1({2, 1, 1, 0});
    EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3);
    EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3);
    EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3);
}

TEST(PrecisionRecallF1, DegenerateIsZero)
{
    const auto r = precision_recall_f1({0, 0, 0, 7});
    EXPECT_EQ(r.precision, 0.0);
    EXPECT_EQ(r.recall, 0.0);
    EXPECT_EQ(r.f1, 0.0);
    EXPECT_EQ(precision_recall_f1({0, 3, 2, 0}).f1, 0.0);
}

TEST(PrecisionRecallF1, PerfectPrediction)
{
    const auto r = precision_recall_f1({5, 0, 0, 11});
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_EQ(r.f1, 1.0);
    EXPECT_THROW(precision_recall_f1({-1, 0, 0, 0}), ConfigError);
}

TEST(PrecisionRecallF1, F1EqualsCountForm)
{
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> u(0, 50);
    for (int t = 0; t < 1000; ++t) {
        const ConfusionCounts c{u(rng), u(rng), u(rng), u(rng)};
        if (c.tp + c.fp + c.fn == 0) continue;
        EXPECT_NEAR(precision_recall_f1(c).f1, 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn), 1e-12);
    }
}

TEST(Iou, SimpleCases)
{
    const auto a = grid_mask(0b000011011), b = grid_mask(0b110000000);
    EXPECT_EQ(iou(a, a), 1.0);
    EXPECT_EQ(iou(a, b), 0.0);
    EXPECT_EQ(iou(grid_mask(0), grid_mask(0)), 1.0);
    EXPECT_THROW(iou(ImageU8(3, 3), ImageU8(3, 4)), ShapeError);
}

TEST(Iou, ExhaustiveThreeByThreeMatchesSetOracle)
{
    for (int a = 0; a < 512; ++a) {
        std::set<int> sa;
        for (int i = 0; i < 9; ++i)
            if (a >> i & 1) sa.insert(i);
        const auto ma = grid_mask(a);
        for (int b = 0; b < 512; ++b) {
            std::set<int> sb, inter, uni;
            for (int i = 0; i < 9; ++i)
                if (b >> i & 1) sb.insert(i);
            std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(inter, inter.end()));
            std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(uni, uni.end()));
            const double want = uni.empty() ? 1.0 : double(inter.size()) / double(uni.size());
            const auto mb = grid_mask(b);
            const double got = iou(ma, mb);
            ASSERT_EQ(got, want) << a << " " << b;
            const double dice = sa.size() + sb.size() ? 2.0 * inter.size() / double(sa.size() + sb.size()) : 1.0;
            ASSERT_LE(got, dice + 1e-15);
            const auto c = pixel_confusion(ma, mb);
            ASSERT_EQ(c.tp, static_cast<std::int64_t>(inter.size()));
            ASSERT_EQ(c.total(), 9);
        }
    }
}

TEST(RocAuc, Examples)
{
    EXPECT_EQ(roc_auc({0.9, 0.4, 0.6}, {true, false, true}), 1.0);
    EXPECT_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}), 1.0);
    EXPECT_EQ(roc_auc({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}), 0.5);
    EXPECT_EQ(roc_auc({0.9, 0.1}, {false, true}), 0.0);
}

TEST(RocAuc, SingleClassUndefined)
{
    EXPECT_THROW(roc_auc({0.1, 0.2}, {true, true}), UndefinedMetricError);
    EXPECT_THROW(roc_auc({0.1}, {false}), UndefinedMetricError);
    EXPECT_THROW(roc_auc({0.1, 0.2}, {true}), ShapeError);
}

TEST(RocAuc, EnumeratedSmallInputsMatchPairCount)
{
    // every labeling of up to 6 cases with scores drawn from a small set so ties are common
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> u(0, 3);
    for (int n = 2; n <= 6; ++n)
        for (int bits = 0; bits < (1 << n); ++bits) {
            std::vector<bool> l(n);
            for (int i = 0; i < n; ++i) l[i] = bits >> i & 1;
            if (bits == 0 || bits == (1 << n) - 1) continue;
            for (int rep = 0; rep < 5; ++rep) {
                std::vector<double> s(n);
                for (auto& v : s) v = 0.25 * u(rng);
                ASSERT_NEAR(roc_auc(s, l), pairwise_auc(s, l), 1e-12);
            }
        }
}

TEST(RocAuc, InvariantUnderMonotoneTransform)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s(30), s2(30), s3(30);
        std::vector<bool> l(30);
        for (int i = 0; i < 30; ++i) {
            s[i] = std::round(u(rng) * 20) / 20;
            l[i] = i % 3 == 0;
            s2[i] = std::exp(3 * s[i]) - 7;
            s3[i] = s[i] * s[i] * s[i];
        }
        const double a = roc_auc(s, l);
        EXPECT_NEAR(roc_auc(s2, l), a, 1e-12);
        EXPECT_NEAR(roc_auc(s3, l), a, 1e-12);
    }
}

TEST(RocCurve, EndsAtOneOne)
{
    const auto c = roc_curve({0.9, 0.4, 0.6, 0.1}, {true, false, true, false});
    ASSERT_EQ(c.size(), 4u);
    EXPECT_EQ(c.front().threshold, 0.9);
    EXPECT_EQ(c.front().tpr, 0.5);
    EXPECT_EQ(c.front().fpr, 0.0);
    EXPECT_EQ(c.back().tpr, 1.0);
    EXPECT_EQ(c.back().fpr, 1.0);
}

TEST(BoundaryError, Examples)
{
    std::mt19937_64 rng(4);
    const auto s = testing_support::random_surface(50, 9, 7, rng);
    const auto same = boundary_error(s, s);
    EXPECT_EQ(same.mean, 0.0);
    EXPECT_EQ(same.std, 0.0);
    auto shifted = s;
    for (auto& z : shifted.z.data()) z += 2;
    const auto off = boundary_error(shifted, s);
    EXPECT_EQ(off.mean, 2.0);
    EXPECT_EQ(off.std, 0.0);
    EXPECT_EQ(off.count, 63u);
    EXPECT_THROW(boundary_error(s, testing_support::random_surface(50, 9, 6, rng)), ShapeError);
    EXPECT_THROW(boundary_error(s, s, std::vector<int>{7}), BoundsError);
}

TEST(BoundaryError, MatchesScalarLoop)
{
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t) {
        const auto a = testing_support::random_surface(64, 11, 8, rng), b = testing_support::random_surface(64, 11, 8, rng);
        const std::vector<int> rows{1, 4, 6};
        for (bool restrict : {false, true}) {
            double s = 0, n = 0;
            for (int y = 0; y < 8; ++y) {
                if (restrict && y != 1 && y != 4 && y != 6) continue;
                for (int x = 0; x < 11; ++x) {
                    s += std::abs(a.z(x, y) - b.z(x, y));
                    n += 1;
                }
            }
            const double mean = s / n;
            double q = 0;
            for (int y = 0; y < 8; ++y) {
                if (restrict && y != 1 && y != 4 && y != 6) continue;
                for (int x = 0; x < 11; ++x) q += (std::abs(a.z(x, y) - b.z(x, y)) - mean) * (std::abs(a.z(x, y) - b.z(x, y)) - mean);
            }
            const auto r = restrict ? boundary_error(a, b, rows) : boundary_error(a, b);
            EXPECT_NEAR(r.mean, mean, 1e-12);
            EXPECT_NEAR(r.std, std::sqrt(q / n), 1e-12);
        }
    }
}

TEST(MeanStd, PopulationStd)
{
    const auto r = mean_std({1.0, 3.0});
    EXPECT_EQ(r.mean, 2.0);
    EXPECT_EQ(r.std, 1.0);
    EXPECT_EQ(mean_std({}).count, 0u);
}

TEST(LesionBscans, ListsColumnsWithLesion)
{
    LesionMask m{ImageU8(5, 6, 0)};
    m.mask(0, 1) = 1;
    m.mask(3, 1) = 1;
    m.mask(4, 4) = 1;
    EXPECT_EQ(lesion_bscans(m), (std::vector<int>{1, 4}));
}
