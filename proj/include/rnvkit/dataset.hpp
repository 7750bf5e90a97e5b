#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnvkit/parallel.hpp"
#include "rnvkit/phantom.hpp"
#include "rnvkit/volume.hpp"

namespace rnvkit {

/// Recipe for a train/test collection of phantom "eyes".
struct DatasetConfig {
    PhantomConfig base;           ///< dims, spacing, levels and artifact intensities
    int n_train = 7;
    int n_test = 3;
    std::uint64_t seed = 1;
    double negative_fraction = 0.375; ///< share of lesion-free cases in each split
    int max_lesions = 3;              ///< positives draw 1..max_lesions lesions
    double artifact_rate = 0.35;      ///< per-flag probability on positive cases
};

struct CaseEntry {
    std::string id;
    std::string split; ///< "train" | "test"
    bool rnv = false;
    std::string scenario;
    std::uint64_t seed = 0;
    std::string oct, octa, vri, lesion, truth; ///< file names relative to the manifest directory
};

struct Manifest {
    std::filesystem::path root; ///< directory holding the manifest and case files
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<CaseEntry> cases;

    std::vector<const CaseEntry*> split(const std::string& name) const
    {
        std::vector<const CaseEntry*> out;
        for (const auto& c : cases)
            if (c.split == name) out.push_back(&c);
        return out;
    }
    std::filesystem::path path_of(const std::string& file) const { return root / file; }
};

inline void to_json(nlohmann::json& j, const DatasetConfig& d)
{
    j = {{"phantom", d.base},
         {"n_train", d.n_train},
         {"n_test", d.n_test},
         {"seed", d.seed},
         {"negative_fraction", d.negative_fraction},
         {"max_lesions", d.max_lesions},
         {"artifact_rate", d.artifact_rate}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& d)
{
    const DatasetConfig def;
    if (j.contains("phantom")) d.base = j.at("phantom").get<PhantomConfig>();
    d.n_train = j.value("n_train", def.n_train);
    d.n_test = j.value("n_test", def.n_test);
    d.seed = j.value("seed", def.seed);
    d.negative_fraction = j.value("negative_fraction", def.negative_fraction);
    d.max_lesions = j.value("max_lesions", def.max_lesions);
    d.artifact_rate = j.value("artifact_rate", def.artifact_rate);
}

inline void to_json(nlohmann::json& j, const CaseEntry& c)
{
    j = {{"id", c.id},   {"split", c.split}, {"rnv", c.rnv},       {"scenario", c.scenario}, {"seed", c.seed},
         {"oct", c.oct}, {"octa", c.octa},   {"vri", c.vri},       {"lesion", c.lesion},     {"truth", c.truth}};
}

inline void from_json(const nlohmann::json& j, CaseEntry& c)
{
    c.id = j.at("id").get<std::string>();
    c.split = j.at("split").get<std::string>();
    c.rnv = j.at("rnv").get<bool>();
    c.scenario = j.value("scenario", "");
    c.seed = j.value("seed", std::uint64_t{0});
    c.oct = j.at("oct").get<std::string>();
    c.octa = j.at("octa").get<std::string>();
    c.vri = j.at("vri").get<std::string>();
    c.lesion = j.at("lesion").get<std::string>();
    c.truth = j.value("truth", "");
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::string case_id(int i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04d", i);
    return buf;
}

} // namespace detail

/// The per-case phantom configuration a dataset entry was generated from.
struct CasePlan {
    CaseEntry entry;
    PhantomConfig config;
};

/// Deterministic case plans. Negatives cycle through artifact scenarios so
/// every split carries protrusion/noise and hemorrhage-mimic confounders.
inline std::vector<CasePlan> plan_dataset(const DatasetConfig& d)
{
    if (d.n_train < 1 || d.n_test < 1) throw ConfigError("dataset: n_train and n_test must be >= 1");
    if (d.negative_fraction < 0.0 || d.negative_fraction > 1.0) throw ConfigError("dataset: negative_fraction in [0, 1]");
    if (d.max_lesions < 1) throw ConfigError("dataset: max_lesions must be >= 1");
    std::mt19937_64 rng(detail::splitmix64(d.seed));
    const ArtifactConfig& level = d.base.artifacts;
    auto pick = [](double v, double fallback) { return v > 0 ? v : fallback; };
    const double protrusion = pick(level.vessel_protrusion, 0.6), saccade = pick(level.microsaccade, 0.5),
                 noise = pick(level.decorrelation_noise, 0.5), hemorrhage = pick(level.hemorrhage_mimic, 0.7);

    std::vector<CasePlan> plans;
    int index = 0;
    for (const auto& [split, count] : {std::pair<std::string, int>{"train", d.n_train}, {"test", d.n_test}}) {
        const int n_neg = static_cast<int>(std::lround(d.negative_fraction * count));
        std::vector<int> negative(count, 0);
        std::fill(negative.begin(), negative.begin() + n_neg, 1);
        std::shuffle(negative.begin(), negative.end(), rng);
        int neg_seen = 0;
        for (int k = 0; k < count; ++k, ++index) {
            CasePlan p;
            p.config = d.base;
            p.config.artifacts = {};
            p.config.morphologies.clear();
            p.config.seed = detail::splitmix64(d.seed ^ (0x1000003ull * (index + 1)));
            p.entry.id = detail::case_id(index);
            p.entry.split = split;
            p.entry.seed = p.config.seed;
            if (negative[k]) {
                p.config.n_lesions = 0;
                switch (neg_seen++ % 5) {
                case 0:
                    p.config.artifacts.vessel_protrusion = protrusion;
                    p.config.artifacts.decorrelation_noise = noise;
                    p.entry.scenario = "negative:protrusion+noise";
                    break;
                case 1:
                    p.config.artifacts.hemorrhage_mimic = hemorrhage;
                    p.entry.scenario = "negative:hemorrhage_mimic";
                    break;
                case 2:
                    p.config.artifacts.vessel_protrusion = protrusion;
                    p.config.artifacts.decorrelation_noise = noise;
                    p.config.artifacts.microsaccade = saccade;
                    p.entry.scenario = "negative:protrusion+noise+microsaccade";
                    break;
                case 3:
                    p.config.artifacts.hemorrhage_mimic = hemorrhage;
                    p.config.artifacts.decorrelation_noise = noise;
                    p.entry.scenario = "negative:hemorrhage_mimic+noise";
                    break;
                default: p.entry.scenario = "negative:clean"; break;
                }
            } else {
                p.entry.rnv = true;
                p.config.n_lesions = std::uniform_int_distribution<int>(1, d.max_lesions)(rng);
                std::uniform_real_distribution<double> u(0.0, 1.0);
                std::string tags;
                auto maybe = [&](double& slot, double value, const char* tag) {
                    if (u(rng) < d.artifact_rate) {
                        slot = value;
                        tags += std::string("+") + tag;
                    }
                };
                maybe(p.config.artifacts.vessel_protrusion, protrusion, "protrusion");
                maybe(p.config.artifacts.decorrelation_noise, noise, "noise");
                maybe(p.config.artifacts.microsaccade, saccade, "microsaccade");
                maybe(p.config.artifacts.hemorrhage_mimic, hemorrhage, "hemorrhage_mimic");
                p.entry.scenario = "positive:" + std::to_string(p.config.n_lesions) + "lesion" + tags;
            }
            const std::string& id = p.entry.id;
            p.entry.oct = id + "_oct.ovol";
            p.entry.octa = id + "_octa.ovol";
            p.entry.vri = "truth_" + id + "_vri.ovol";
            p.entry.lesion = "truth_" + id + "_lesion.ovol";
            p.entry.truth = "truth_" + id + ".json";
            plans.push_back(std::move(p));
        }
    }
    return plans;
}

inline nlohmann::json truth_to_json(const CasePlan& plan, const PhantomTruth& truth)
{
    nlohmann::json lesions = nlohmann::json::array();
    for (const auto& l : truth.lesion_labels)
        lesions.push_back({{"label", l.label},
                           {"morphology", to_string(l.morphology)},
                           {"area_px", l.area_px},
                           {"max_elevation_px", l.max_elevation_px},
                           {"centroid", {l.centroid_x, l.centroid_y}}});
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& a : truth.artifacts)
        artifacts.push_back({{"kind", a.kind}, {"bscan", a.bscan}, {"intensity", a.intensity}});
    return {{"case_id", plan.entry.id}, {"rnv", plan.entry.rnv},     {"scenario", plan.entry.scenario},
            {"seed", plan.config.seed}, {"lesions", lesions},         {"artifacts", artifacts},
            {"vri_file", plan.entry.vri}, {"lesion_file", plan.entry.lesion}, {"config", plan.config}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j)
{
    rnvkit::detail::write_file_bytes(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path)
{
    try {
        return nlohmann::json::parse(rnvkit::detail::read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

/// Writes one generated case (volumes, truth masks, truth JSON) into dir.
inline void write_case(const std::filesystem::path& dir, const CasePlan& plan, const Phantom& ph)
{
    save_volume(ph.oct, dir / plan.entry.oct);
    save_volume(ph.octa, dir / plan.entry.octa);
    save_surface(ph.truth.vri, ph.oct.spacing(), dir / plan.entry.vri);
    save_lesion_mask(ph.truth.lesions, ph.oct.spacing(), dir / plan.entry.lesion);
    write_json(dir / plan.entry.truth, truth_to_json(plan, ph.truth));
}

inline nlohmann::json manifest_to_json(const DatasetConfig& d, const std::vector<CasePlan>& plans)
{
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& p : plans) cases.push_back(p.entry);
    return {{"format", "rnvkit-dataset"}, {"version", 1}, {"seed", d.seed}, {"config", d}, {"cases", cases}};
}

inline Manifest load_manifest(const std::filesystem::path& path)
{
    const auto j = read_json(path);
    if (j.value("format", "") != "rnvkit-dataset") throw FormatError("not a dataset manifest: " + path.string());
    Manifest m;
    m.root = path.parent_path();
    m.seed = j.value("seed", std::uint64_t{0});
    m.config = j.value("config", nlohmann::json::object());
    for (const auto& c : j.at("cases")) m.cases.push_back(c.get<CaseEntry>());
    return m;
}

struct LoadedCase {
    const CaseEntry* entry = nullptr;
    Volume oct, octa;
    VriSurface vri;
    LesionMask lesion;
};

inline LoadedCase load_case(const Manifest& m, const CaseEntry& c)
{
    LoadedCase out;
    out.entry = &c;
    out.oct = load_volume(m.path_of(c.oct));
    out.octa = load_volume(m.path_of(c.octa));
    out.vri = load_surface(m.path_of(c.vri));
    out.lesion = load_lesion_mask(m.path_of(c.lesion));
    if (!out.oct.same_shape(out.octa)) throw ShapeError("case " + c.id + ": OCT/OCTA shapes differ");
    return out;
}

/// Generates every case and writes `manifest.json` into out_dir. `workers`
/// cases are generated concurrently; output does not depend on it.
inline Manifest generate_dataset(const DatasetConfig& d, const std::filesystem::path& out_dir, int workers = 1)
{
    const auto plans = plan_dataset(d);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    parallel_for(static_cast<int>(plans.size()), workers, [&](int i) {
        write_case(out_dir, plans[i], generate_phantom(plans[i].config));
    });
    write_json(out_dir / "manifest.json", manifest_to_json(d, plans));
    return load_manifest(out_dir / "manifest.json");
}

} // namespace rnvkit
