#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnvkit/dataset.hpp"
#include "rnvkit/hash.hpp"
#include "rnvkit/longitudinal.hpp"
#include "rnvkit/metrics.hpp"
#include "rnvkit/rnv_net.hpp"
#include "rnvkit/slab.hpp"
#include "rnvkit/vri_net.hpp"

namespace rnvkit {

inline constexpr const char* kToolVersion = "0.1.0";

// --- PGM export -------------------------------------------------------------------

/// 16-bit binary PGM, min-max scaled to [0, 65535]; a constant image maps to 0.
/// Image rows become PGM rows.
template <class T>
std::string encode_pgm(const Image2D<T>& img)
{
    double lo = 0.0, hi = 0.0;
    if (img.size()) {
        const auto [mn, mx] = std::minmax_element(img.data().begin(), img.data().end());
        lo = static_cast<double>(*mn);
        hi = static_cast<double>(*mx);
    }
    std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n65535\n";
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            const double v = hi > lo ? (static_cast<double>(img(r, c)) - lo) / (hi - lo) : 0.0;
            const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
            out.push_back(static_cast<char>(q >> 8));
            out.push_back(static_cast<char>(q & 0xff));
        }
    return out;
}

template <class T>
void write_pgm(const std::filesystem::path& path, const Image2D<T>& img)
{
    detail::write_file_bytes(path, encode_pgm(img));
}

// --- provenance -----------------------------------------------------------------

inline std::string file_checksum(const std::filesystem::path& p) { return hex64(fnv1a64(detail::read_file_bytes(p))); }

/// Tool version, command, config echo, seeds and input checksums.
inline nlohmann::json provenance(const std::string& command, const nlohmann::json& config,
                                 const std::vector<std::filesystem::path>& inputs, std::optional<std::uint64_t> seed = {})
{
    nlohmann::json in = nlohmann::json::object();
    for (const auto& p : inputs) in[p.filename().string()] = file_checksum(p);
    nlohmann::json j = {{"tool", "rnvkit"}, {"version", kToolVersion}, {"command", command}, {"config", config}, {"inputs", in}};
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { detail::write_file_bytes(path, text); }

// --- case naming ------------------------------------------------------------------

/// Case id from an input file name: "case_0003_oct.ovol" -> "case_0003".
inline std::string case_id_from_path(const std::filesystem::path& p)
{
    std::string stem = p.stem().string();
    for (const char* suffix : {"_octa", "_oct"}) {
        const std::string s = suffix;
        if (stem.size() > s.size() && stem.compare(stem.size() - s.size(), s.size(), s) == 0) return stem.substr(0, stem.size() - s.size());
    }
    return stem;
}

inline std::filesystem::path truth_surface_path(const std::filesystem::path& oct_path)
{
    return oct_path.parent_path() / ("truth_" + case_id_from_path(oct_path) + "_vri.ovol");
}

// --- full-case inference ------------------------------------------------------------

struct InferOptions {
    SurfaceSource surface = SurfaceSource::Predicted;
    double k = kDefaultSubtractionScale;
    std::optional<double> threshold;
    std::optional<int> min_area_px;
    RefineOptions refine{};
    int workers = 1;
};

struct CaseInference {
    std::string case_id;
    VriSurface surface;
    EnFaceStack stack;
    RnvInference rnv;
    ImageU8 vessels;
    ImageF overlay;
};

/// Stage 1 (unless a surface is supplied), slab projection, stage 2 and vessel refinement.
template <class V, class R>
CaseInference infer_case(const std::string& id, const Volume& oct, const Volume& octa, const VriNet<V>* vri, RnvNet<R>& rnv,
                         const InferOptions& opt, const VriSurface* given_surface = nullptr)
{
    CaseInference out;
    out.case_id = id;
    if (given_surface) {
        out.surface = *given_surface;
    } else {
        if (!vri) throw ConfigError("infer: predicted surface needs a VRI checkpoint");
        out.surface = infer_vri(oct, octa, *vri, opt.workers).surface;
    }
    out.stack = build_stack(oct, octa, out.surface, opt.k, {id + "_oct", id + "_octa", id + "_surface"});
    out.rnv = infer_rnv(out.stack, rnv, oct.spacing(), opt.threshold, opt.min_area_px);
    out.vessels = refine_vessels(out.stack.octa_vitreous, out.rnv.diagnosis.mask, opt.refine);
    out.overlay = lesion_overlay(out.stack, out.rnv.diagnosis.mask);
    return out;
}

/// Writes every inference product of one case into dir.
inline void write_case_outputs(const std::filesystem::path& dir, const CaseInference& c, const Spacing& spacing,
                               const nlohmann::json& prov)
{
    std::filesystem::create_directories(dir);
    const auto p = [&](const std::string& suffix) { return dir / (c.case_id + suffix); };
    save_surface(c.surface, spacing, p("_surface.ovol"));
    const std::pair<const char*, const ImageF*> slabs[] = {{"_oct_vitreous", &c.stack.oct_vitreous},
                                                           {"_oct_gcc", &c.stack.oct_gcc},
                                                           {"_octa_vitreous", &c.stack.octa_vitreous},
                                                           {"_octa_gcc", &c.stack.octa_gcc},
                                                           {"_octa_subtracted", &c.stack.octa_subtracted}};
    for (const auto& [name, img] : slabs) {
        const bool is_octa = std::string(name).rfind("_octa", 0) == 0;
        write_pgm(p(std::string(name) + ".pgm"), *img);
        save_volume(image_to_volume(*img, spacing, is_octa ? Modality::OCTA : Modality::OCT), p(std::string(name) + ".ovol"));
    }
    save_volume(image_to_volume(c.rnv.probability, spacing, Modality::Probability), p("_prob.ovol"));
    save_lesion_mask(c.rnv.diagnosis.mask, spacing, p("_mask.ovol"));
    save_lesion_mask(LesionMask{c.vessels}, spacing, p("_vessels.ovol"));
    write_pgm(p("_overlay.pgm"), c.overlay);
    write_json(p("_diagnosis.json"), diagnosis_json(c.case_id, c.rnv.diagnosis));
    write_json(p("_provenance.json"), prov);
}

// --- evaluation -------------------------------------------------------------------

struct CaseEvaluation {
    std::string case_id;
    bool rnv_truth = false;
    bool is_rnv = false;
    double score = 0.0;
    MeanStd boundary;                    ///< all columns
    std::optional<MeanStd> boundary_rnv; ///< B-scans crossing the lesion
    ConfusionCounts pixels;
    PrecisionRecallF1 prf;
    double iou = 0.0;
    std::vector<double> abs_errors;     ///< per-column |dz|, kept for pooling
    std::vector<double> abs_errors_rnv; ///< same, lesion B-scans only
};

inline CaseEvaluation evaluate_case(const std::string& id, bool rnv_truth, const VriSurface& pred_surface,
                                    const VriSurface& truth_surface, const LesionMask& pred_mask, const LesionMask& truth_mask,
                                    bool is_rnv, double score)
{
    CaseEvaluation e;
    e.case_id = id;
    e.rnv_truth = rnv_truth;
    e.is_rnv = is_rnv;
    e.score = score;
    e.boundary = boundary_error(pred_surface, truth_surface);
    const auto ys = lesion_bscans(truth_mask);
    if (!ys.empty()) e.boundary_rnv = boundary_error(pred_surface, truth_surface, ys);
    require_same_shape(pred_surface.z, truth_surface.z, "evaluate_case");
    for (int y = 0; y < pred_surface.bscans(); ++y) {
        const bool lesion_row = std::binary_search(ys.begin(), ys.end(), y);
        for (int x = 0; x < pred_surface.width(); ++x) {
            const double d = std::abs(double(pred_surface.z(x, y)) - double(truth_surface.z(x, y)));
            e.abs_errors.push_back(d);
            if (lesion_row) e.abs_errors_rnv.push_back(d);
        }
    }
    e.pixels = pixel_confusion(pred_mask.mask, truth_mask.mask);
    e.prf = precision_recall_f1(e.pixels);
    e.iou = iou(pred_mask, truth_mask);
    return e;
}

struct EvaluationSummary {
    MeanStd boundary;      ///< pooled over every column of every case
    MeanStd boundary_rnv;  ///< pooled over lesion B-scans
    std::optional<double> auc;
    double sensitivity = 0.0, specificity = 0.0;
    ConfusionCounts cases;
    MeanStd f1_positive, iou_positive; ///< over RNV-positive cases
    MeanStd f1_all, iou_all;
    std::vector<RocPoint> roc;
};

inline EvaluationSummary summarize(const std::vector<CaseEvaluation>& cases)
{
    EvaluationSummary s;
    std::vector<double> all_err, rnv_err, f1p, ioup, f1a, ioua, scores;
    std::vector<bool> labels;
    for (const auto& c : cases) {
        all_err.insert(all_err.end(), c.abs_errors.begin(), c.abs_errors.end());
        rnv_err.insert(rnv_err.end(), c.abs_errors_rnv.begin(), c.abs_errors_rnv.end());
        scores.push_back(c.score);
        labels.push_back(c.rnv_truth);
        if (c.rnv_truth) {
            f1p.push_back(c.prf.f1);
            ioup.push_back(c.iou);
        }
        f1a.push_back(c.prf.f1);
        ioua.push_back(c.iou);
        s.cases.tp += c.is_rnv && c.rnv_truth;
        s.cases.fp += c.is_rnv && !c.rnv_truth;
        s.cases.fn += !c.is_rnv && c.rnv_truth;
        s.cases.tn += !c.is_rnv && !c.rnv_truth;
    }
    s.boundary = mean_std(all_err);
    s.boundary_rnv = mean_std(rnv_err);
    try {
        s.auc = roc_auc(scores, labels);
    } catch (const UndefinedMetricError&) {
    }
    s.roc = roc_curve(scores, labels);
    s.sensitivity = s.cases.tp + s.cases.fn ? double(s.cases.tp) / double(s.cases.tp + s.cases.fn) : 0.0;
    s.specificity = s.cases.tn + s.cases.fp ? double(s.cases.tn) / double(s.cases.tn + s.cases.fp) : 0.0;
    s.f1_positive = mean_std(f1p);
    s.iou_positive = mean_std(ioup);
    s.f1_all = mean_std(f1a);
    s.iou_all = mean_std(ioua);
    return s;
}

inline std::string evaluation_csv(const std::vector<CaseEvaluation>& cases)
{
    std::string out = "case_id,rnv_truth,is_rnv,score,boundary_mean_px,boundary_std_px,boundary_rnv_mean_px,precision,recall,f1,iou\n";
    char buf[512];
    for (const auto& c : cases) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%.17g,%.17g,%.17g,%s,%.17g,%.17g,%.17g,%.17g\n", c.case_id.c_str(), int(c.rnv_truth),
                      int(c.is_rnv), c.score, c.boundary.mean, c.boundary.std,
                      c.boundary_rnv ? std::to_string(c.boundary_rnv->mean).c_str() : "", c.prf.precision, c.prf.recall, c.prf.f1,
                      c.iou);
        out += buf;
    }
    return out;
}

inline nlohmann::json evaluation_json(const EvaluationSummary& s, std::size_t n_cases)
{
    auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"n", m.count}}; };
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : s.roc) roc.push_back({{"threshold", p.threshold}, {"tpr", p.tpr}, {"fpr", p.fpr}});
    return {{"cases", n_cases},
            {"boundary_error_px", ms(s.boundary)},
            {"boundary_error_rnv_bscans_px", ms(s.boundary_rnv)},
            {"auc", s.auc ? nlohmann::json(*s.auc) : nlohmann::json(nullptr)},
            {"sensitivity", s.sensitivity},
            {"specificity", s.specificity},
            {"case_confusion", {{"tp", s.cases.tp}, {"fp", s.cases.fp}, {"fn", s.cases.fn}, {"tn", s.cases.tn}}},
            {"f1", ms(s.f1_positive)},
            {"iou", ms(s.iou_positive)},
            {"f1_all_cases", ms(s.f1_all)},
            {"iou_all_cases", ms(s.iou_all)},
            {"roc", roc}};
}

/// Scores every `<id>_diagnosis.json` in pred_dir against `truth_<id>_*` files in truth_dir.
inline std::vector<CaseEvaluation> evaluate_directory(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir)
{
    if (!std::filesystem::is_directory(pred_dir)) throw IoError("not a directory: " + pred_dir.string());
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(pred_dir)) {
        const std::string name = e.path().filename().string();
        const std::string suffix = "_diagnosis.json";
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    if (ids.empty()) throw IoError("no *_diagnosis.json files in " + pred_dir.string());
    std::sort(ids.begin(), ids.end());
    std::vector<CaseEvaluation> out;
    for (const auto& id : ids) {
        const auto diag = read_json(pred_dir / (id + "_diagnosis.json"));
        const auto truth = read_json(truth_dir / ("truth_" + id + ".json"));
        out.push_back(evaluate_case(id, truth.at("rnv").get<bool>(), load_surface(pred_dir / (id + "_surface.ovol")),
                                    load_surface(truth_dir / ("truth_" + id + "_vri.ovol")),
                                    load_lesion_mask(pred_dir / (id + "_mask.ovol")),
                                    load_lesion_mask(truth_dir / ("truth_" + id + "_lesion.ovol")), diag.at("is_rnv").get<bool>(),
                                    diag.at("score").get<double>()));
    }
    return out;
}

// --- longitudinal tracking ------------------------------------------------------------

struct VisitInput {
    double time_months = 0.0;
    std::filesystem::path mask, vessels;
};

namespace detail {

inline std::filesystem::path unique_with_suffix(const std::filesystem::path& dir, const std::string& suffix)
{
    std::vector<std::filesystem::path> hits;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0) hits.push_back(e.path());
    }
    if (hits.size() != 1)
        throw IoError("expected exactly one *" + suffix + " in " + dir.string() + ", found " + std::to_string(hits.size()));
    return hits.front();
}

} // namespace detail

/// Reads `visits.json`: {"visits": [{"time_months": t, "dir": "v0"}, ...]}. Each
/// visit directory holds the `*_mask.ovol` and `*_vessels.ovol` written by infer.
inline std::vector<VisitInput> read_visits(const std::filesystem::path& case_dir)
{
    const auto j = read_json(case_dir / "visits.json");
    std::vector<VisitInput> out;
    try {
        for (const auto& v : j.at("visits")) {
            const auto dir = case_dir / v.at("dir").get<std::string>();
            if (!std::filesystem::is_directory(dir)) throw IoError("visit directory missing: " + dir.string());
            out.push_back({v.at("time_months").get<double>(), detail::unique_with_suffix(dir, "_mask.ovol"),
                           detail::unique_with_suffix(dir, "_vessels.ovol")});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("visits.json: ") + e.what());
    }
    return out;
}

inline std::vector<ProgressionRow> track_visits(const std::vector<VisitInput>& visits)
{
    std::vector<TimepointRecord> records;
    for (const auto& v : visits) {
        Spacing sp;
        const auto membrane = load_lesion_mask(v.mask, &sp);
        const auto vessels = load_lesion_mask(v.vessels);
        records.push_back(quantify_timepoint(membrane, vessels.mask, sp, v.time_months));
    }
    return progression_series(records);
}

} // namespace rnvkit
