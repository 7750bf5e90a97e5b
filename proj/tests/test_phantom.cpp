#include <gtest/gtest.h>

#include <set>

#include "rnvkit/dataset.hpp"
#include "rnvkit/phantom.hpp"
#include "rnvkit/slab.hpp"
#include "test_support.hpp"

using namespace rnvkit;
using testing_support::TempDir;

namespace {

PhantomConfig small_config(std::uint64_t seed)
{
    PhantomConfig c;
    c.depth = 64;
    c.width = c.bscans = 64;
    c.seed = seed;
    return c;
}

// Max elevation of lesion-level flow above the VRI per truth component,
// measured from the volume.
std::vector<int> measured_elevations(const Phantom& ph)
{
    const auto cl = label_components(ph.truth.lesions.mask);
    std::vector<int> elev(cl.components.size(), 0);
    const float level = static_cast<float>(SignalLevels{}.lesion_flow);
    for (int x = 0; x < ph.octa.width(); ++x)
        for (int y = 0; y < ph.octa.bscans(); ++y) {
            const int lab = cl.labels(x, y);
            if (!lab) continue;
            const int zv = ph.truth.vri.z(x, y);
            for (int z = 0; z < zv; ++z)
                if (ph.octa.at(z, x, y) >= level) elev[lab - 1] = std::max(elev[lab - 1], zv - z);
        }
    return elev;
}

} // namespace

TEST(Phantom, NoPathologyHasEmptyTruthAndBackgroundVitreous)
{
    const auto ph = generate_phantom(small_config(3));
    EXPECT_EQ(count_nonzero(ph.truth.lesions.mask), 0u);
    EXPECT_TRUE(ph.truth.lesion_labels.empty());
    const SignalLevels L;
    const double ceiling = L.background_flow + 3 * L.noise_sigma;
    for (int y = 0; y < ph.octa.bscans(); ++y)
        for (int x = 0; x < ph.octa.width(); ++x)
            for (int z = 0; z < ph.truth.vri.z(x, y); ++z) ASSERT_LT(ph.octa.at(z, x, y), ceiling);
}

TEST(Phantom, SameSeedIsBitwiseIdentical)
{
    auto cfg = small_config(42);
    cfg.n_lesions = 2;
    cfg.artifacts.decorrelation_noise = 0.5;
    cfg.artifacts.microsaccade = 0.5;
    const auto a = generate_phantom(cfg), b = generate_phantom(cfg);
    EXPECT_EQ(a.oct, b.oct);
    EXPECT_EQ(a.octa, b.octa);
    EXPECT_EQ(a.truth.vri, b.truth.vri);
    EXPECT_EQ(a.truth.lesions.mask, b.truth.lesions.mask);
    cfg.seed = 43;
    EXPECT_NE(generate_phantom(cfg).octa, a.octa);
}

TEST(Phantom, OneLesionPerMorphologyIsOrderedByElevation)
{
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u, 6u}) {
        PhantomConfig cfg;
        cfg.seed = seed;
        cfg.n_lesions = 3;
        cfg.morphologies = {Morphology::Flat, Morphology::Tabletop, Morphology::Forward};
        const auto ph = generate_phantom(cfg);
        const auto cl = label_components(ph.truth.lesions.mask);
        ASSERT_EQ(cl.components.size(), 3u) << "seed " << seed;
        ASSERT_EQ(ph.truth.lesion_labels.size(), 3u);
        const auto elev = measured_elevations(ph);
        int flat = -1, table = -1, forward = -1;
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& l = ph.truth.lesion_labels[k];
            EXPECT_EQ(l.label, static_cast<int>(k) + 1);
            EXPECT_EQ(l.area_px, cl.components[k].area_px);
            EXPECT_EQ(l.max_elevation_px, elev[k]);
            if (l.morphology == Morphology::Flat) flat = elev[k];
            if (l.morphology == Morphology::Tabletop) table = elev[k];
            if (l.morphology == Morphology::Forward) forward = elev[k];
        }
        EXPECT_LE(flat, 3);
        EXPECT_LT(flat, table) << "seed " << seed;
        EXPECT_LE(table, forward) << "seed " << seed;
    }
}

TEST(Phantom, EveryLesionHasFlowAboveTheSurface)
{
    PhantomConfig cfg;
    cfg.seed = 77;
    cfg.n_lesions = 3;
    const auto ph = generate_phantom(cfg);
    for (int e : measured_elevations(ph)) EXPECT_GE(e, 1);
}

TEST(Phantom, TruthMatchesThresholdedVitreousProjection)
{
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        PhantomConfig cfg;
        cfg.seed = seed;
        cfg.n_lesions = 3;
        cfg.artifacts.vessel_protrusion = 0.8;
        cfg.artifacts.decorrelation_noise = 0.5;
        const auto ph = generate_phantom(cfg);
        const auto vit = project_vitreous(ph.octa, ph.truth.vri);
        ImageU8 recovered(vit.rows(), vit.cols(), 0);
        for (std::size_t i = 0; i < vit.size(); ++i) recovered.data()[i] = vit.data()[i] >= 0.7f;
        EXPECT_EQ(recovered, ph.truth.lesions.mask) << "seed " << seed;
    }
}

TEST(Phantom, ProtrusionLiftsSurfaceOverVessels)
{
    auto cfg = small_config(8);
    cfg.artifacts.vessel_protrusion = 1.0;
    const auto ph = generate_phantom(cfg);
    int lifted = 0;
    for (std::size_t i = 0; i < ph.truth.vri.z.size(); ++i) {
        EXPECT_LE(ph.truth.vri.z.data()[i], ph.truth.base_vri.z.data()[i]);
        lifted += ph.truth.vri.z.data()[i] < ph.truth.base_vri.z.data()[i];
    }
    EXPECT_GT(lifted, 0);
    ASSERT_EQ(ph.truth.artifacts.size(), 1u);
    EXPECT_EQ(ph.truth.artifacts[0].kind, "vessel_protrusion");
}

TEST(Phantom, MicrosaccadeAnnotatesBscans)
{
    auto cfg = small_config(9);
    cfg.artifacts.microsaccade = 1.0;
    const auto ph = generate_phantom(cfg);
    ASSERT_FALSE(ph.truth.artifacts.empty());
    for (const auto& a : ph.truth.artifacts) {
        EXPECT_EQ(a.kind, "microsaccade");
        ASSERT_GE(a.bscan, 0);
        // the whole B-scan is bright, vitreous included
        EXPECT_GE(ph.octa.at(0, 0, a.bscan), 0.35f);
    }
}

TEST(Phantom, HemorrhageMimicIsBrightWithoutFlow)
{
    auto cfg = small_config(10);
    cfg.artifacts.hemorrhage_mimic = 1.0;
    const auto ph = generate_phantom(cfg);
    const auto oct_vit = project_vitreous(ph.oct, ph.truth.vri);
    const auto octa_vit = project_vitreous(ph.octa, ph.truth.vri);
    float oct_peak = 0, octa_peak = 0;
    for (float v : oct_vit.data()) oct_peak = std::max(oct_peak, v);
    for (float v : octa_vit.data()) octa_peak = std::max(octa_peak, v);
    EXPECT_GT(oct_peak, 0.7f);
    EXPECT_LT(octa_peak, 0.1f);
    EXPECT_EQ(count_nonzero(ph.truth.lesions.mask), 0u);
}

TEST(Phantom, ValuesStayInUnitRange)
{
    auto cfg = small_config(12);
    cfg.n_lesions = 2;
    cfg.artifacts = {1.0, 1.0, 1.0, 1.0};
    const auto ph = generate_phantom(cfg);
    for (float v : ph.oct.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : ph.octa.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Phantom, InvalidConfigsRejected)
{
    auto cfg = small_config(1);
    cfg.depth = 6;
    EXPECT_THROW(generate_phantom(cfg), ConfigError);
    cfg = small_config(1);
    cfg.n_lesions = 1;
    cfg.morphology_weights = {0, 0, 0};
    EXPECT_THROW(generate_phantom(cfg), ConfigError);
    cfg = small_config(1);
    cfg.artifacts.microsaccade = 1.5;
    EXPECT_THROW(generate_phantom(cfg), ConfigError);
}

TEST(Phantom, InfeasibleGeometryRejected)
{
    auto cfg = small_config(2);
    cfg.n_lesions = 1;
    cfg.lesion_radius_min = cfg.lesion_radius_max = 40.0;
    EXPECT_THROW(generate_phantom(cfg), ConfigError);
    cfg = small_config(2);
    cfg.n_lesions = 60;
    EXPECT_THROW(generate_phantom(cfg), ConfigError);
}

TEST(Phantom, ConfigJsonRoundTrip)
{
    PhantomConfig cfg;
    cfg.n_lesions = 2;
    cfg.morphologies = {Morphology::Flat, Morphology::Forward};
    cfg.artifacts.microsaccade = 0.25;
    cfg.seed = 123456789012345ull;
    const auto back = nlohmann::json(cfg).get<PhantomConfig>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(cfg));
}

TEST(Dataset, SevenThreeSplitWithUniqueIds)
{
    DatasetConfig d;
    d.base = small_config(1);
    d.n_train = 7;
    d.n_test = 3;
    const auto plans = plan_dataset(d);
    ASSERT_EQ(plans.size(), 10u);
    std::set<std::string> ids;
    int train = 0;
    for (const auto& p : plans) {
        ids.insert(p.entry.id);
        train += p.entry.split == "train";
    }
    EXPECT_EQ(ids.size(), 10u);
    EXPECT_EQ(train, 7);
}

TEST(Dataset, ZeroTrainingCasesRejected)
{
    DatasetConfig d;
    d.n_train = 0;
    EXPECT_THROW(plan_dataset(d), ConfigError);
}

TEST(Dataset, GenerationIsDeterministicAndLoadable)
{
    TempDir a("ds_a"), b("ds_b");
    DatasetConfig d;
    d.base = small_config(1);
    d.base.depth = 48;
    d.n_train = 3;
    d.n_test = 2;
    d.seed = 99;
    const auto ma = generate_dataset(d, a.path());
    generate_dataset(d, b.path(), 2);
    EXPECT_EQ(detail::read_file_bytes(a / "manifest.json"), detail::read_file_bytes(b / "manifest.json"));
    for (const auto& c : ma.cases) {
        EXPECT_EQ(detail::read_file_bytes(a / c.octa), detail::read_file_bytes(b / c.octa));
        const auto lc = load_case(ma, c);
        EXPECT_EQ(lc.oct.depth(), 48);
        EXPECT_EQ(count_nonzero(lc.lesion.mask) > 0, c.rnv);
        const auto truth = read_json(a / c.truth);
        EXPECT_EQ(truth.at("rnv").get<bool>(), c.rnv);
    }
}
