// rnvkit command-line front end: phantom generation, training, inference,
// evaluation and longitudinal tracking.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "rnvkit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rnvkit;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kInternal = 3 };

nlohmann::json read_config(const std::string& path)
{
    if (path.empty()) return nlohmann::json::object();
    return read_json(path);
}

void log_epoch(const char* model, int epoch, double train, double val)
{
    std::fprintf(stderr, "[%s] epoch %d train %.6f val %.6f\n", model, epoch, train, val);
}

int cmd_phantom_gen(const std::string& config_path, const std::string& out)
{
    const auto cfg_json = read_config(config_path);
    const auto cfg = cfg_json.get<DatasetConfig>();
    const auto m = generate_dataset(cfg, out, threads_from_env());
    write_json(fs::path(out) / "provenance.json",
               provenance("phantom gen", nlohmann::json(cfg), config_path.empty() ? std::vector<fs::path>{} : std::vector<fs::path>{config_path},
                          cfg.seed));
    std::printf("wrote %zu cases to %s\n", m.cases.size(), out.c_str());
    return kOk;
}

int cmd_train(const std::string& model, const std::string& manifest_path, const std::string& config_path, std::uint64_t seed,
              const std::string& out, const std::string& surface, const std::string& vri_ckpt)
{
    const auto m = load_manifest(manifest_path);
    const auto cfg_json = read_config(config_path);
    fs::create_directories(out);
    std::vector<fs::path> inputs{manifest_path};
    if (!config_path.empty()) inputs.push_back(config_path);
    if (model == "vri") {
        const auto cfg = cfg_json.get<VriNetConfig>();
        auto r = train_vri(m, cfg, seed, [](int e, double t, double v) { log_epoch("vri", e, t, v); });
        save_vri_checkpoint(r.model, fs::path(out) / "vri.ckpt");
        write_text(fs::path(out) / "vri_log.csv", vri_log_csv(r.log));
        auto prov = provenance("train vri", nlohmann::json(cfg), inputs, seed);
        prov["best_epoch"] = r.best_epoch;
        prov["train_cases"] = r.train_ids;
        prov["val_cases"] = r.val_ids;
        write_json(fs::path(out) / "vri_provenance.json", prov);
        std::printf("best epoch %d of %zu\n", r.best_epoch, r.log.size());
        return kOk;
    }
    const auto cfg = cfg_json.get<RnvNetConfig>();
    const auto source = surface_source_from_string(surface);
    std::optional<VriNet<float>> vri;
    if (source == SurfaceSource::Predicted) {
        if (vri_ckpt.empty()) throw ConfigError("train rnv --surface predicted needs --vri-ckpt");
        vri.emplace(load_vri_net<float>(vri_ckpt));
        inputs.push_back(vri_ckpt);
    }
    auto r = train_rnv<float>(m, cfg, seed, source, vri ? &*vri : nullptr, threads_from_env(),
                              [](int e, double t, double v) { log_epoch("rnv", e, t, v); });
    save_rnv_checkpoint(r.model, fs::path(out) / "rnv.ckpt");
    write_text(fs::path(out) / "rnv_log.csv", rnv_log_csv(r.log));
    auto prov = provenance("train rnv", nlohmann::json(cfg), inputs, seed);
    prov["surface"] = to_string(source);
    prov["best_epoch"] = r.best_epoch;
    prov["train_cases"] = r.train_ids;
    prov["val_cases"] = r.val_ids;
    write_json(fs::path(out) / "rnv_provenance.json", prov);
    std::printf("best epoch %d of %zu\n", r.best_epoch, r.log.size());
    return kOk;
}

struct InferArgs {
    std::string oct, octa, vri_ckpt, rnv_ckpt, surface = "predicted", out;
    double k = kDefaultSubtractionScale;
    std::optional<double> threshold;
    std::optional<int> min_area;
    RefineOptions refine;
};

int cmd_infer(const InferArgs& a)
{
    InferOptions opt;
    opt.surface = surface_source_from_string(a.surface);
    opt.k = a.k;
    opt.threshold = a.threshold;
    opt.min_area_px = a.min_area;
    opt.refine = a.refine;
    opt.workers = threads_from_env();
    const auto oct = load_volume(a.oct);
    const auto octa = load_volume(a.octa);
    if (oct.modality() != Modality::OCT) throw FormatError(a.oct + ": expected an OCT container");
    if (octa.modality() != Modality::OCTA) throw FormatError(a.octa + ": expected an OCTA container");
    auto rnv = load_rnv_net<float>(a.rnv_ckpt);
    std::vector<fs::path> inputs{a.oct, a.octa, a.rnv_ckpt};
    std::optional<VriNet<float>> vri;
    std::optional<VriSurface> given;
    if (opt.surface == SurfaceSource::Truth) {
        const auto p = truth_surface_path(a.oct);
        given = load_surface(p);
        inputs.push_back(p);
    } else {
        if (a.vri_ckpt.empty()) throw ConfigError("infer --surface predicted needs --vri-ckpt");
        vri.emplace(load_vri_net<float>(a.vri_ckpt));
        inputs.push_back(a.vri_ckpt);
    }
    const std::string id = case_id_from_path(a.oct);
    const auto c = infer_case(id, oct, octa, vri ? &*vri : nullptr, rnv, opt, given ? &*given : nullptr);
    nlohmann::json cfg = {{"surface", a.surface},
                          {"k", a.k},
                          {"threshold", opt.threshold.value_or(rnv.config().threshold)},
                          {"min_area_px", opt.min_area_px.value_or(rnv.config().min_area_px)},
                          {"refine", {{"windows", a.refine.windows}, {"c", a.refine.c}, {"opening_radius", a.refine.opening_radius},
                                      {"min_component_px", a.refine.min_component_px}}}};
    write_case_outputs(a.out, c, oct.spacing(), provenance("infer", cfg, inputs));
    std::printf("%s: is_rnv=%s score=%.4f components=%zu\n", id.c_str(), c.rnv.diagnosis.is_rnv ? "true" : "false",
                c.rnv.diagnosis.score, c.rnv.diagnosis.components.size());
    return kOk;
}

int cmd_eval(const std::string& pred, const std::string& truth, const std::string& out)
{
    const auto cases = evaluate_directory(pred, truth);
    const auto s = summarize(cases);
    fs::create_directories(out);
    write_text(fs::path(out) / "eval_cases.csv", evaluation_csv(cases));
    write_json(fs::path(out) / "eval_summary.json", evaluation_json(s, cases.size()));
    write_json(fs::path(out) / "provenance.json",
               provenance("eval", {{"pred", fs::path(pred).filename().string()}, {"truth", fs::path(truth).filename().string()}}, {}));
    std::printf("cases %zu  boundary %.3f +- %.3f px  auc %s  f1 %.3f  iou %.3f\n", cases.size(), s.boundary.mean, s.boundary.std,
                s.auc ? std::to_string(*s.auc).c_str() : "n/a", s.f1_positive.mean, s.iou_positive.mean);
    return kOk;
}

int cmd_track(const std::string& case_dir, const std::string& out)
{
    const auto visits = read_visits(case_dir);
    const auto rows = track_visits(visits);
    fs::create_directories(out);
    write_text(fs::path(out) / "progression.csv", progression_csv(rows));
    write_json(fs::path(out) / "progression.json", progression_json(rows));
    std::vector<fs::path> inputs{fs::path(case_dir) / "visits.json"};
    for (const auto& v : visits) inputs.insert(inputs.end(), {v.mask, v.vessels});
    write_json(fs::path(out) / "provenance.json", provenance("track", nlohmann::json::object(), inputs));
    std::printf("%zu visits\n", rows.size());
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"rnvkit: two-stage OCT/OCTA retinal neovascularization pipeline"};
    app.require_subcommand(1);

    auto* phantom = app.add_subcommand("phantom", "synthetic phantom datasets");
    phantom->require_subcommand(1);
    auto* gen = phantom->add_subcommand("gen", "generate a phantom dataset");
    std::string gen_config, gen_out;
    gen->add_option("--config", gen_config, "dataset config JSON")->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a network");
    std::string model, manifest, train_config, train_out, train_surface = "predicted", train_vri;
    std::uint64_t seed = 0;
    train->add_option("model", model, "vri or rnv")->required()->check(CLI::IsMember({"vri", "rnv"}));
    train->add_option("--manifest", manifest, "dataset manifest.json")->required()->check(CLI::ExistingFile);
    train->add_option("--config", train_config, "network config JSON")->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "RNG seed")->required();
    train->add_option("--out", train_out, "checkpoint directory")->required();
    train->add_option("--surface", train_surface, "rnv only: truth or predicted")->check(CLI::IsMember({"truth", "predicted"}));
    train->add_option("--vri-ckpt", train_vri, "rnv only: VRI checkpoint for predicted surfaces")->check(CLI::ExistingFile);

    auto* infer = app.add_subcommand("infer", "run the pipeline on one OCT/OCTA pair");
    InferArgs ia;
    std::string windows;
    infer->add_option("--oct", ia.oct)->required()->check(CLI::ExistingFile);
    infer->add_option("--octa", ia.octa)->required()->check(CLI::ExistingFile);
    infer->add_option("--vri-ckpt", ia.vri_ckpt)->check(CLI::ExistingFile);
    infer->add_option("--rnv-ckpt", ia.rnv_ckpt)->required()->check(CLI::ExistingFile);
    infer->add_option("--surface", ia.surface)->check(CLI::IsMember({"truth", "predicted"}));
    infer->add_option("--k", ia.k, "OCTA subtraction scale")->check(CLI::NonNegativeNumber);
    infer->add_option("--threshold", ia.threshold, "binarization threshold");
    infer->add_option("--min-area", ia.min_area, "minimum lesion area in pixels");
    infer->add_option("--refine-windows", windows, "comma-separated window sizes");
    infer->add_option("--refine-c", ia.refine.c);
    infer->add_option("--refine-opening", ia.refine.opening_radius)->check(CLI::NonNegativeNumber);
    infer->add_option("--refine-min-px", ia.refine.min_component_px)->check(CLI::NonNegativeNumber);
    infer->add_option("--out", ia.out)->required();

    auto* eval = app.add_subcommand("eval", "score inference outputs against truth");
    std::string pred, truth, eval_out;
    eval->add_option("--pred", pred)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--truth", truth)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", eval_out)->required();

    auto* track = app.add_subcommand("track", "longitudinal lesion quantification");
    std::string case_dir, track_out;
    track->add_option("--case-dir", case_dir)->required()->check(CLI::ExistingDirectory);
    track->add_option("--out", track_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_phantom_gen(gen_config, gen_out);
        if (train->parsed()) return cmd_train(model, manifest, train_config, seed, train_out, train_surface, train_vri);
        if (infer->parsed()) {
            if (!windows.empty()) {
                ia.refine.windows.clear();
                std::stringstream ss(windows);
                for (std::string tok; std::getline(ss, tok, ',');) ia.refine.windows.push_back(std::stoi(tok));
            }
            return cmd_infer(ia);
        }
        if (eval->parsed()) return cmd_eval(pred, truth, eval_out);
        if (track->parsed()) return cmd_track(case_dir, track_out);
    } catch (const InvariantError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return kDataError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: bad value: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}
