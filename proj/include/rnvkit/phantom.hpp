#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnvkit/components.hpp"
#include "rnvkit/filters.hpp"
#include "rnvkit/volume.hpp"

namespace rnvkit {

enum class Morphology { Flat = 0, Tabletop = 1, Forward = 2 };

inline const char* to_string(Morphology m)
{
    switch (m) {
    case Morphology::Flat: return "flat";
    case Morphology::Tabletop: return "tabletop";
    case Morphology::Forward: return "forward";
    }
    return "?";
}

/// Artifact intensities in [0, 1]; 0 disables the artifact.
struct ArtifactConfig {
    double vessel_protrusion = 0.0;
    double microsaccade = 0.0;
    double decorrelation_noise = 0.0;
    double hemorrhage_mimic = 0.0; ///< hyperreflective, flow-free blob in the vitreous

    friend bool operator==(const ArtifactConfig&, const ArtifactConfig&) = default;
};

/// Reflectivity (OCT) and flow (OCTA) levels, all in [0, 1].
struct SignalLevels {
    double vitreous_oct = 0.05;
    double background_flow = 0.02;
    double noise_sigma = 0.01;   ///< OCTA noise in the vitreous, truncated at 2.5 sigma
    double oct_noise_sigma = 0.03;
    double gcc_oct = 0.70;
    double retina_oct = 0.45;
    double rpe_oct = 0.90;
    double choroid_oct = 0.45;
    double capillary_flow = 0.15;
    double vessel_flow = 0.80;
    double vessel_oct = 0.75;
    double lesion_flow = 0.70; ///< every lesion flow voxel is >= this level
    double lesion_oct = 0.55;

    friend bool operator==(const SignalLevels&, const SignalLevels&) = default;
};

struct PhantomConfig {
    int depth = 96, width = 96, bscans = 96;
    Spacing spacing{3.05f, 40.0f, 40.0f};
    int n_lesions = 0;
    std::array<double, 3> morphology_weights{1.0, 1.0, 1.0}; ///< flat, tabletop, forward
    /// Explicit morphology per lesion; overrides the weights when non-empty.
    std::vector<Morphology> morphologies;
    double lesion_radius_min = 6.0; ///< px, en face
    double lesion_radius_max = 11.0;
    ArtifactConfig artifacts;
    double surface_correlation_px = 24.0;
    SignalLevels levels;
    std::uint64_t seed = 1;
};

struct LesionTruth {
    int label = 0; ///< component label in the truth lesion mask
    Morphology morphology = Morphology::Flat;
    std::int64_t area_px = 0;
    int max_elevation_px = 0;
    double centroid_x = 0.0, centroid_y = 0.0;
};

struct ArtifactAnnotation {
    std::string kind; ///< microsaccade | vessel_protrusion | decorrelation_noise | hemorrhage_mimic
    int bscan = -1;   ///< affected B-scan, -1 when volume-wide
    double intensity = 0.0;
};

struct PhantomTruth {
    VriSurface vri;
    LesionMask lesions;
    std::vector<LesionTruth> lesion_labels;
    std::vector<ArtifactAnnotation> artifacts;
    /// Surface before protrusion lifting; equals vri when the artifact is off.
    VriSurface base_vri;
};

struct Phantom {
    Volume oct;
    Volume octa;
    PhantomTruth truth;
};

// --- JSON -----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const ArtifactConfig& a)
{
    j = {{"vessel_protrusion", a.vessel_protrusion},
         {"microsaccade", a.microsaccade},
         {"decorrelation_noise", a.decorrelation_noise},
         {"hemorrhage_mimic", a.hemorrhage_mimic}};
}

inline void from_json(const nlohmann::json& j, ArtifactConfig& a)
{
    a.vessel_protrusion = j.value("vessel_protrusion", 0.0);
    a.microsaccade = j.value("microsaccade", 0.0);
    a.decorrelation_noise = j.value("decorrelation_noise", 0.0);
    a.hemorrhage_mimic = j.value("hemorrhage_mimic", 0.0);
}

inline void to_json(nlohmann::json& j, const SignalLevels& s)
{
    j = {{"vitreous_oct", s.vitreous_oct},     {"background_flow", s.background_flow},
         {"noise_sigma", s.noise_sigma},       {"oct_noise_sigma", s.oct_noise_sigma},
         {"gcc_oct", s.gcc_oct},               {"retina_oct", s.retina_oct},
         {"rpe_oct", s.rpe_oct},               {"choroid_oct", s.choroid_oct},
         {"capillary_flow", s.capillary_flow}, {"vessel_flow", s.vessel_flow},
         {"vessel_oct", s.vessel_oct},         {"lesion_flow", s.lesion_flow},
         {"lesion_oct", s.lesion_oct}};
}

inline void from_json(const nlohmann::json& j, SignalLevels& s)
{
    const SignalLevels d;
    s.vitreous_oct = j.value("vitreous_oct", d.vitreous_oct);
    s.background_flow = j.value("background_flow", d.background_flow);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.oct_noise_sigma = j.value("oct_noise_sigma", d.oct_noise_sigma);
    s.gcc_oct = j.value("gcc_oct", d.gcc_oct);
    s.retina_oct = j.value("retina_oct", d.retina_oct);
    s.rpe_oct = j.value("rpe_oct", d.rpe_oct);
    s.choroid_oct = j.value("choroid_oct", d.choroid_oct);
    s.capillary_flow = j.value("capillary_flow", d.capillary_flow);
    s.vessel_flow = j.value("vessel_flow", d.vessel_flow);
    s.vessel_oct = j.value("vessel_oct", d.vessel_oct);
    s.lesion_flow = j.value("lesion_flow", d.lesion_flow);
    s.lesion_oct = j.value("lesion_oct", d.lesion_oct);
}

inline void to_json(nlohmann::json& j, const PhantomConfig& c)
{
    std::vector<std::string> morph;
    for (auto m : c.morphologies) morph.emplace_back(to_string(m));
    j = {{"dims", {c.depth, c.width, c.bscans}},
         {"spacing", {c.spacing.axial, c.spacing.lateral_x, c.spacing.lateral_y}},
         {"n_lesions", c.n_lesions},
         {"morphology_weights", c.morphology_weights},
         {"morphologies", morph},
         {"lesion_radius", {c.lesion_radius_min, c.lesion_radius_max}},
         {"artifacts", c.artifacts},
         {"surface_correlation_px", c.surface_correlation_px},
         {"levels", c.levels},
         {"seed", c.seed}};
}

inline Morphology morphology_from_string(const std::string& s)
{
    if (s == "flat") return Morphology::Flat;
    if (s == "tabletop") return Morphology::Tabletop;
    if (s == "forward") return Morphology::Forward;
    throw ConfigError("unknown morphology '" + s + "'");
}

inline void from_json(const nlohmann::json& j, PhantomConfig& c)
{
    const PhantomConfig d;
    if (j.contains("dims")) {
        const auto dims = j.at("dims").get<std::vector<int>>();
        if (dims.size() != 3) throw ConfigError("dims must have 3 entries (Z, X, Y)");
        c.depth = dims[0];
        c.width = dims[1];
        c.bscans = dims[2];
    }
    if (j.contains("spacing")) {
        const auto s = j.at("spacing").get<std::vector<float>>();
        if (s.size() != 3) throw ConfigError("spacing must have 3 entries");
        c.spacing = {s[0], s[1], s[2]};
    }
    c.n_lesions = j.value("n_lesions", d.n_lesions);
    c.morphology_weights = j.value("morphology_weights", d.morphology_weights);
    c.morphologies.clear();
    for (const auto& m : j.value("morphologies", std::vector<std::string>{})) c.morphologies.push_back(morphology_from_string(m));
    if (j.contains("lesion_radius")) {
        const auto r = j.at("lesion_radius").get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("lesion_radius must be [min, max]");
        c.lesion_radius_min = r[0];
        c.lesion_radius_max = r[1];
    }
    c.artifacts = j.value("artifacts", d.artifacts);
    c.surface_correlation_px = j.value("surface_correlation_px", d.surface_correlation_px);
    c.levels = j.value("levels", d.levels);
    c.seed = j.value("seed", d.seed);
}

// --- generation -------------------------------------------------------------

namespace detail {

struct PhantomRng {
    std::mt19937_64 eng;
    explicit PhantomRng(std::uint64_t seed) : eng(seed) {}
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
    double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng); }
};

inline ImageD smooth_field(int rows, int cols, double sigma, PhantomRng& rng)
{
    ImageD f(rows, cols);
    for (auto& v : f.data()) v = rng.normal();
    f = gaussian_blur(f, sigma);
    standardize(f);
    return f;
}

inline void validate(const PhantomConfig& c)
{
    if (c.depth < 8 || c.width < 8 || c.bscans < 8) throw ConfigError("phantom: every dimension must be >= 8");
    if (!(c.spacing.axial > 0 && c.spacing.lateral_x > 0 && c.spacing.lateral_y > 0))
        throw ConfigError("phantom: spacings must be > 0");
    if (c.n_lesions < 0) throw ConfigError("phantom: n_lesions must be >= 0");
    double wsum = 0.0;
    for (double w : c.morphology_weights) {
        if (w < 0) throw ConfigError("phantom: morphology weights must be non-negative");
        wsum += w;
    }
    if (c.n_lesions > 0 && c.morphologies.empty() && !(wsum > 0))
        throw ConfigError("phantom: morphology weights must sum to > 0 when lesions are requested");
    if (!c.morphologies.empty() && static_cast<int>(c.morphologies.size()) != c.n_lesions)
        throw ConfigError("phantom: explicit morphologies must list one entry per lesion");
    for (double a : {c.artifacts.vessel_protrusion, c.artifacts.microsaccade, c.artifacts.decorrelation_noise,
                     c.artifacts.hemorrhage_mimic})
        if (a < 0.0 || a > 1.0) throw ConfigError("phantom: artifact intensities must lie in [0, 1]");
    if (!(c.lesion_radius_min >= 2.0 && c.lesion_radius_max >= c.lesion_radius_min))
        throw ConfigError("phantom: invalid lesion radius range");
    if (c.surface_correlation_px <= 0) throw ConfigError("phantom: surface correlation length must be > 0");
}

/// Irregular connected blob inside a disk, as an en-face mask.
inline ImageU8 lesion_blob(int rows, int cols, double cx, double cy, double radius, PhantomRng& rng)
{
    const ImageD noise = smooth_field(rows, cols, std::max(1.5, radius / 3.0), rng);
    ImageU8 m(rows, cols, 0);
    for (int x = 0; x < rows; ++x)
        for (int y = 0; y < cols; ++y) {
            const double r = std::hypot(x - cx, y - cy) / radius;
            if (r > 1.0) continue;
            if ((1.0 - r * r) + 0.35 * noise(x, y) > 0.35) m(x, y) = 1;
        }
    // Keep the component holding the most pixels.
    const auto cl = label_components(m);
    if (cl.components.empty()) return m;
    auto best = std::max_element(cl.components.begin(), cl.components.end(),
                                 [](const Component& a, const Component& b) { return a.area_px < b.area_px; });
    ImageU8 out(rows, cols, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = cl.labels.data()[i] == best->label;
    return out;
}

} // namespace detail

/// Minimum footprint area of a generated lesion, px.
inline constexpr std::int64_t kMinLesionAreaPx = 40;

/// Deterministic synthetic OCT/OCTA pair with exact truth.
inline Phantom generate_phantom(const PhantomConfig& cfg)
{
    detail::validate(cfg);
    const int Z = cfg.depth, X = cfg.width, Y = cfg.bscans;
    const auto& L = cfg.levels;
    const double axial = cfg.spacing.axial;
    detail::PhantomRng rng(cfg.seed);

    // Surface: smooth random relief plus a shallow bowl for eye curvature.
    const int z_min = std::max(8, static_cast<int>(std::lround(0.25 * Z)));
    const int z_max = std::max(z_min, Z - std::max(4, static_cast<int>(std::lround(0.35 * Z))));
    const ImageD relief = detail::smooth_field(X, Y, cfg.surface_correlation_px / 2.0, rng);
    const double base = 0.36 * Z, amp = 0.05 * Z, bowl = 0.08 * Z;
    const double cx0 = rng.uniform(0.3, 0.7) * X, cy0 = rng.uniform(0.3, 0.7) * Y;
    VriSurface surf{Z, Image2D<std::int32_t>(X, Y, 0)};
    for (int x = 0; x < X; ++x)
        for (int y = 0; y < Y; ++y) {
            const double r2 = (std::pow((x - cx0) / X, 2) + std::pow((y - cy0) / Y, 2)) * 2.0;
            const double z = base + amp * relief(x, y) + bowl * r2;
            surf.z(x, y) = std::clamp(static_cast<int>(std::lround(z)), z_min, z_max);
        }
    const VriSurface base_surf = surf;

    // Superficial vessels: sinusoidal tubes running along x or y.
    const int n_vessels = std::max(2, (X + Y) / 48);
    Image2D<float> vessel_radius(X, Y, 0.0f); // en-face tube radius where a vessel runs, px
    for (int v = 0; v < n_vessels; ++v) {
        const bool along_x = (v % 2) == 0;
        const int len = along_x ? X : Y, span = along_x ? Y : X;
        const double offset = rng.uniform(0.1, 0.9) * span;
        const double amplitude = rng.uniform(2.0, 0.12 * span + 2.0);
        const double period = rng.uniform(0.6, 1.5) * len;
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double radius = rng.uniform(1.0, 2.0); // diameter 2-4 px
        for (int t = 0; t < len; ++t) {
            const double centre = offset + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase);
            for (int s = static_cast<int>(std::floor(centre - radius)); s <= static_cast<int>(std::ceil(centre + radius)); ++s) {
                if (s < 0 || s >= span || std::abs(s - centre) > radius) continue;
                const int x = along_x ? t : s, y = along_x ? s : t;
                vessel_radius(x, y) = std::max(vessel_radius(x, y), static_cast<float>(radius));
            }
        }
    }

    PhantomTruth truth;
    // Protrusion: the surface rises over vessels; the vessel rides up with it.
    ImageU8 protruded(X, Y, 0);
    if (cfg.artifacts.vessel_protrusion > 0) {
        const int lift = static_cast<int>(std::lround(2.0 + 3.0 * cfg.artifacts.vessel_protrusion));
        ImageD bump(X, Y, 0.0);
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y) bump(x, y) = vessel_radius(x, y) > 0 ? 1.0 : 0.0;
        bump = gaussian_blur(bump, 1.0);
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y) {
                const int dz = static_cast<int>(std::lround(lift * std::min(1.0, 1.6 * bump(x, y))));
                if (dz <= 0) continue;
                surf.z(x, y) = std::max(z_min, surf.z(x, y) - dz);
                protruded(x, y) = 1;
            }
        truth.artifacts.push_back({"vessel_protrusion", -1, cfg.artifacts.vessel_protrusion});
    }

    Volume oct(Z, X, Y, cfg.spacing, Modality::OCT);
    Volume octa(Z, X, Y, cfg.spacing, Modality::OCTA);
    const ImageD capillary = detail::smooth_field(X, Y, 1.0, rng);
    const double gcc_um = 80.0;
    for (int y = 0; y < Y; ++y)
        for (int x = 0; x < X; ++x) {
            const int zv = surf.z(x, y);
            const int zb = base_surf.z(x, y);
            auto oc = oct.column(x, y);
            auto fl = octa.column(x, y);
            const double vr = vessel_radius(x, y);
            // Vessel centre sits ~25 µm below the original surface, or just below the lifted one.
            const double vessel_centre = protruded(x, y) ? zv + vr : zb + 25.0 / axial;
            for (int z = 0; z < Z; ++z) {
                const double on = rng.normal(L.oct_noise_sigma);
                const double fn = std::clamp(rng.normal(L.noise_sigma), -2.5 * L.noise_sigma, 2.5 * L.noise_sigma);
                if (z < zv) {
                    oc[z] = static_cast<float>(L.vitreous_oct + on);
                    fl[z] = static_cast<float>(L.background_flow + fn);
                    continue;
                }
                const double d_um = (z - zv) * axial;
                double r, f;
                if (d_um < gcc_um) {
                    r = L.gcc_oct;
                    f = L.capillary_flow * (0.5 + 0.5 * std::tanh(capillary(x, y)));
                } else if (d_um < 150.0) {
                    r = L.retina_oct;
                    f = L.capillary_flow * 0.8;
                } else if (d_um < 200.0) {
                    r = 0.55;
                    f = L.capillary_flow * 0.5;
                } else if (d_um < 260.0) {
                    r = 0.30;
                    f = L.background_flow;
                } else if (d_um < 290.0) {
                    r = L.rpe_oct;
                    f = L.background_flow;
                } else {
                    r = L.choroid_oct * std::exp(-(d_um - 290.0) / 200.0);
                    f = 0.3;
                }
                if (vr > 0 && std::abs(z - vessel_centre) <= vr) {
                    r = L.vessel_oct;
                    f = L.vessel_flow;
                }
                oc[z] = static_cast<float>(r + on);
                fl[z] = static_cast<float>(std::max(0.0, f + fn));
            }
        }

    // Lesions.
    truth.lesions.mask = ImageU8(X, Y, 0);
    ImageU8 occupied(X, Y, 0);
    std::vector<Morphology> kinds = cfg.morphologies;
    if (kinds.empty()) {
        std::discrete_distribution<int> pick(cfg.morphology_weights.begin(), cfg.morphology_weights.end());
        for (int i = 0; i < cfg.n_lesions; ++i) kinds.push_back(static_cast<Morphology>(pick(rng.eng)));
    }
    auto place_blob = [&](double rmin, double rmax) -> ImageU8 {
        for (int attempt = 0; attempt < 400; ++attempt) {
            const double radius = rng.uniform(rmin, rmax);
            const int margin = static_cast<int>(std::ceil(radius)) + 2;
            if (2 * margin >= X || 2 * margin >= Y) throw ConfigError("phantom: lesion radius does not fit the field");
            const double cx = rng.integer(margin, X - 1 - margin), cy = rng.integer(margin, Y - 1 - margin);
            ImageU8 blob = detail::lesion_blob(X, Y, cx, cy, radius, rng);
            if (static_cast<std::int64_t>(count_nonzero(blob)) < kMinLesionAreaPx) continue;
            const ImageU8 grown = dilate(blob, 2, false);
            bool clash = false;
            for (std::size_t i = 0; i < grown.size() && !clash; ++i) clash = grown.data()[i] && occupied.data()[i];
            if (clash) continue;
            for (std::size_t i = 0; i < grown.size(); ++i) occupied.data()[i] |= grown.data()[i];
            return blob;
        }
        throw ConfigError("phantom: could not place non-overlapping lesions; reduce n_lesions or radius");
    };

    std::vector<std::array<int, 2>> seed_pixels;
    for (Morphology kind : kinds) {
        const ImageU8 blob = place_blob(cfg.lesion_radius_min, cfg.lesion_radius_max);
        int headroom = Z;
        double minx = X, maxx = 0, miny = Y, maxy = 0;
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y)
                if (blob(x, y)) {
                    headroom = std::min(headroom, surf.z(x, y));
                    minx = std::min<double>(minx, x), maxx = std::max<double>(maxx, x);
                    miny = std::min<double>(miny, y), maxy = std::max<double>(maxy, y);
                }
        const int table_h = std::max(4, static_cast<int>(std::lround(0.45 * headroom)));
        const int forward_h = std::max(table_h, static_cast<int>(std::lround(0.8 * headroom)));
        if ((kind != Morphology::Flat && forward_h > headroom) || headroom < 4)
            throw ConfigError("phantom: lesion height exceeds the vitreous depth; increase Z");
        const ImageD texture = detail::smooth_field(X, Y, 0.8, rng);
        const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ux = std::cos(dir), uy = std::sin(dir);
        double pmin = 1e9, pmax = -1e9;
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y)
                if (blob(x, y)) {
                    const double p = x * ux + y * uy;
                    pmin = std::min(pmin, p);
                    pmax = std::max(pmax, p);
                }
        // Stalk columns for tabletop lesions: a few footprint pixels.
        std::vector<std::array<int, 2>> footprint;
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y)
                if (blob(x, y)) footprint.push_back({x, y});
        ImageU8 stalk(X, Y, 0);
        if (kind == Morphology::Tabletop) {
            const int n_stalks = 3;
            for (int s = 0; s < n_stalks; ++s) {
                const auto [sx, sy] = footprint[rng.integer(0, static_cast<int>(footprint.size()) - 1)];
                for (int dx = -1; dx <= 1; ++dx)
                    for (int dy = -1; dy <= 1; ++dy) {
                        const int xx = sx + dx, yy = sy + dy;
                        if (xx >= 0 && yy >= 0 && xx < X && yy < Y && blob(xx, yy)) stalk(xx, yy) = 1;
                    }
            }
        }
        int max_elev = 0;
        for (const auto& [x, y] : footprint) {
            const int zv = surf.z(x, y);
            const double tex = 0.5 + 0.5 * std::tanh(texture(x, y));
            int top = zv, bottom = zv; // flow voxels occupy [top, bottom)
            switch (kind) {
            case Morphology::Flat: {
                const int h = 1 + static_cast<int>(std::lround(2.0 * tex));
                top = zv - h;
                break;
            }
            case Morphology::Tabletop:
                top = zv - table_h;
                bottom = stalk(x, y) ? zv : std::min(zv, top + 3);
                break;
            case Morphology::Forward: {
                const double t = pmax > pmin ? (x * ux + y * uy - pmin) / (pmax - pmin) : 1.0;
                const int e = std::clamp(static_cast<int>(std::lround(2.0 + t * (forward_h - 2.0))), 1, forward_h);
                top = zv - e;
                bottom = std::min(zv, top + 3);
                break;
            }
            }
            top = std::max(0, top);
            for (int z = top; z < bottom; ++z) {
                const double tz = 0.5 + 0.5 * std::sin(1.7 * z + 3.0 * texture(x, y));
                octa.at(z, x, y) = static_cast<float>(L.lesion_flow + 0.25 * tex * tz);
                oct.at(z, x, y) = static_cast<float>(L.lesion_oct + 0.1 * tex);
            }
            if (bottom > top) {
                truth.lesions.mask(x, y) = 1;
                max_elev = std::max(max_elev, zv - top);
            }
        }
        seed_pixels.push_back(footprint.front());
        LesionTruth lt;
        lt.morphology = kind;
        lt.max_elevation_px = max_elev;
        truth.lesion_labels.push_back(lt);
    }
    // Attach labels in component order (raster order of first pixel).
    if (!truth.lesion_labels.empty()) {
        const auto cl = label_components(truth.lesions.mask);
        if (cl.components.size() != truth.lesion_labels.size())
            throw InvariantError("phantom: lesion footprints merged or vanished");
        std::vector<LesionTruth> ordered(cl.components.size());
        for (std::size_t i = 0; i < truth.lesion_labels.size(); ++i) {
            const auto [sx, sy] = seed_pixels[i];
            const int k = cl.labels(sx, sy) - 1;
            ordered[k] = truth.lesion_labels[i];
            ordered[k].label = cl.components[k].label;
            ordered[k].area_px = cl.components[k].area_px;
            ordered[k].centroid_x = cl.components[k].centroid_row;
            ordered[k].centroid_y = cl.components[k].centroid_col;
        }
        truth.lesion_labels = std::move(ordered);
    }

    // Hemorrhage mimic: bright, flow-free material floating above the surface.
    if (cfg.artifacts.hemorrhage_mimic > 0) {
        const ImageU8 blob = place_blob(cfg.lesion_radius_min, cfg.lesion_radius_max + 2.0);
        const double bright = 0.55 + 0.35 * cfg.artifacts.hemorrhage_mimic;
        for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y) {
                if (!blob(x, y)) continue;
                const int zv = surf.z(x, y);
                const int bottom = zv - 3;
                const int top = std::max(0, bottom - std::max(2, static_cast<int>(std::lround(0.2 * zv))));
                for (int z = top; z < bottom; ++z) oct.at(z, x, y) = static_cast<float>(bright + rng.normal(L.oct_noise_sigma));
            }
        truth.artifacts.push_back({"hemorrhage_mimic", -1, cfg.artifacts.hemorrhage_mimic});
    }

    if (cfg.artifacts.decorrelation_noise > 0) {
        const double sd = 0.12 * cfg.artifacts.decorrelation_noise;
        for (auto& v : octa.data()) v = static_cast<float>(v + std::min(std::abs(rng.normal(sd)), 4.0 * sd));
        truth.artifacts.push_back({"decorrelation_noise", -1, cfg.artifacts.decorrelation_noise});
    }

    if (cfg.artifacts.microsaccade > 0) {
        const int count = std::max(1, static_cast<int>(std::lround(0.03 * Y * cfg.artifacts.microsaccade)));
        for (int k = 0; k < count; ++k) {
            const int y = rng.integer(0, Y - 1);
            for (int x = 0; x < X; ++x)
                for (int z = 0; z < Z; ++z) {
                    const float line = static_cast<float>(0.35 + 0.4 * cfg.artifacts.microsaccade * rng.uniform());
                    octa.at(z, x, y) = std::max(octa.at(z, x, y), line);
                }
            truth.artifacts.push_back({"microsaccade", y, cfg.artifacts.microsaccade});
        }
    }

    for (auto& v : oct.data()) v = std::clamp(v, 0.0f, 1.0f);
    for (auto& v : octa.data()) v = std::clamp(v, 0.0f, 1.0f);

    truth.vri = surf;
    truth.base_vri = base_surf;
    return {std::move(oct), std::move(octa), std::move(truth)};
}

} // namespace rnvkit
