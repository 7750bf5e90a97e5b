#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "rnvkit/longitudinal.hpp"

using namespace rnvkit;

namespace {

const Spacing kSpacing{3.05f, 40.0f, 40.0f};

LesionMask block(int rows, int cols, int r0, int c0, int h, int w)
{
    LesionMask m{ImageU8(rows, cols, 0)};
    for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) m.mask(r, c) = 1;
    return m;
}

} // namespace

TEST(Timepoint, EmptyMembraneIsAllZero)
{
    const auto r = quantify_timepoint(LesionMask{ImageU8(8, 8, 0)}, ImageU8(8, 8, 0), kSpacing);
    EXPECT_EQ(r.membrane_area_mm2, 0.0);
    EXPECT_EQ(r.vessel_area_mm2, 0.0);
    EXPECT_EQ(r.vessel_density, 0.0);
}

TEST(Timepoint, HundredPixelsAtFortyMicrons)
{
    const auto m = block(20, 20, 2, 3, 10, 10);
    const auto r = quantify_timepoint(m, ImageU8(20, 20, 0), kSpacing);
    EXPECT_NEAR(r.membrane_area_mm2, 0.16, 1e-9);
}

TEST(Timepoint, DensityWithinUnitInterval)
{
    std::mt19937_64 rng(1);
    std::bernoulli_distribution b(0.3);
    for (int t = 0; t < 50; ++t) {
        const auto m = block(16, 16, 3, 3, 8, 9);
        ImageU8 v(16, 16, 0);
        for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = m.mask.data()[i] && b(rng);
        const auto r = quantify_timepoint(m, v, kSpacing);
        EXPECT_GE(r.vessel_density, 0.0);
        EXPECT_LE(r.vessel_density, 1.0);
    }
    const auto m = block(16, 16, 0, 0, 4, 4);
    const auto full = quantify_timepoint(m, m.mask, kSpacing);
    EXPECT_EQ(full.vessel_density, 1.0);
    EXPECT_EQ(full.vessel_area_mm2, full.membrane_area_mm2);
    EXPECT_THROW(quantify_timepoint(m, ImageU8(16, 15), kSpacing), ShapeError);
}

TEST(Timepoint, AreaAdditiveAndScalesWithSpacing)
{
    const auto a = block(30, 30, 0, 0, 5, 5), b = block(30, 30, 20, 20, 4, 6);
    LesionMask both{a.mask};
    for (std::size_t i = 0; i < both.mask.size(); ++i) both.mask.data()[i] |= b.mask.data()[i];
    const ImageU8 none(30, 30, 0);
    const double sa = quantify_timepoint(a, none, kSpacing).membrane_area_mm2;
    const double sb = quantify_timepoint(b, none, kSpacing).membrane_area_mm2;
    EXPECT_NEAR(quantify_timepoint(both, none, kSpacing).membrane_area_mm2, sa + sb, 1e-12);
    const Spacing twice{3.05f, 80.0f, 80.0f};
    EXPECT_NEAR(quantify_timepoint(a, none, twice).membrane_area_mm2, 4 * sa, 1e-12);
}

TEST(Progression, IdenticalVisitsHaveZeroDeltas)
{
    const auto m = block(10, 10, 1, 1, 5, 5);
    auto r0 = quantify_timepoint(m, m.mask, kSpacing, 0.0), r1 = quantify_timepoint(m, m.mask, kSpacing, 3.0);
    const auto s = progression_series({r0, r1});
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[1].delta_area_mm2, 0.0);
    EXPECT_EQ(s[1].delta_vessel_area_mm2, 0.0);
    EXPECT_EQ(s[1].delta_density, 0.0);
    EXPECT_EQ(s[1].rate_mm2_per_month, 0.0);
}

TEST(Progression, RateOverInterval)
{
    TimepointRecord a, b;
    a.membrane_area_mm2 = 1.0;
    b.visit_time_months = 4.0;
    b.membrane_area_mm2 = 1.5;
    const auto s = progression_series({a, b});
    EXPECT_DOUBLE_EQ(s[1].rate_mm2_per_month, 0.125);
    EXPECT_DOUBLE_EQ(s[1].delta_area_mm2, 0.5);
    EXPECT_EQ(s[0].rate_mm2_per_month, 0.0);
}

TEST(Progression, FiveVisitSchedule)
{
    std::vector<TimepointRecord> v;
    const double months[] = {0, 1, 4, 6, 12};
    for (int i = 0; i < 5; ++i) {
        const auto m = block(40, 40, 10, 10, 5 + i, 6);
        v.push_back(quantify_timepoint(m, ImageU8(40, 40, 0), kSpacing, months[i]));
    }
    const auto s = progression_series(v);
    ASSERT_EQ(s.size(), 5u);
    EXPECT_NEAR(s[4].delta_area_mm2, 4 * 6 * 0.0016, 1e-12);
    EXPECT_NEAR(s[4].rate_mm2_per_month, 6 * 0.0016 / 6, 1e-12);
    const auto csv = progression_csv(s);
    std::istringstream in(csv);
    std::string line;
    int lines = 0;
    std::getline(in, line);
    EXPECT_EQ(line, "visit_time_months,membrane_area_mm2,vessel_area_mm2,vessel_density,delta_area_mm2,rate_mm2_per_month");
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 5);
    const auto j = progression_json(s);
    ASSERT_EQ(j.at("visits").size(), 5u);
    EXPECT_EQ(j["visits"][2]["visit_time_months"], 4.0);
}

TEST(Progression, BadScheduleRejected)
{
    TimepointRecord a, b;
    b.visit_time_months = 0.0;
    EXPECT_THROW(progression_series({a, b}), ConfigError);
    b.visit_time_months = -1.0;
    EXPECT_THROW(progression_series({a, b}), ConfigError);
    EXPECT_THROW(progression_series({a}), ConfigError);
}
