// coroflow command-line interface.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "coroflow/eval/ply.hpp"
#include "coroflow/eval/predictions.hpp"
#include "coroflow/eval/report.hpp"
#include "coroflow/icd/gradcheck.hpp"
#include "coroflow/icd/serialize.hpp"
#include "coroflow/icd/train.hpp"
#include "coroflow/ingest/dataset.hpp"
#include "coroflow/ingest/nifti.hpp"
#include "coroflow/ingest/vtp.hpp"
#include "coroflow/parallel.hpp"
#include "coroflow/patchset.hpp"
#include "coroflow/synthflow.hpp"

namespace fs = std::filesystem;
using namespace coroflow;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) out.push_back(item);
    return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        T v;
        if constexpr (std::is_floating_point_v<T>)
            v = static_cast<T>(std::stod(s, &used));
        else {
            if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
            v = static_cast<T>(std::stoull(s, &used));
        }
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError("bad value '" + s + "' for " + what);
    }
}

template <class T>
std::array<T, 3> parse_triple(const std::string& s, const std::string& what) {
    const auto parts = split_list(s);
    if (parts.size() != 3) throw UsageError(what + " expects three comma-separated values, got '" + s + "'");
    return {parse_number<T>(parts[0], what), parse_number<T>(parts[1], what), parse_number<T>(parts[2], what)};
}

/// "28" -> 28^3; "d,h,w" otherwise.
PatchShape parse_patch(const std::string& s) {
    if (s.find(',') == std::string::npos) {
        const auto n = parse_number<std::size_t>(s, "--patch");
        return {n, n, n};
    }
    return parse_triple<std::size_t>(s, "--patch");
}

patchset::SplitRatios parse_ratios(const std::string& s) {
    const auto r = parse_triple<double>(s, "--ratios");
    return patchset::SplitRatios::from_weights(r[0], r[1], r[2]);
}

Frame parse_frame(const std::string& s) {
    if (s == "lps" || s == "LPS") return Frame::LPS;
    if (s == "ras" || s == "RAS") return Frame::RAS;
    throw UsageError("frame must be lps or ras, got '" + s + "'");
}

void write_dataset_outputs(const patchset::BuildResult& r, const fs::path& out) {
    ingest::write_dataset(r.manifest, r.samples, out);
    patchset::write_fallback_log(r.fallbacks, out / "fallbacks.csv");
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    std::size_t n[3] = {0, 0, 0};
    for (const auto& c : r.manifest.cases) ++n[static_cast<int>(c.split)];
    std::printf("wrote %zu samples from %zu cases (train %zu, val %zu, test %zu cases), %zu label fallbacks -> %s\n",
                r.samples.size(), r.manifest.cases.size(), n[0], n[1], n[2], r.fallbacks.size(), out.string().c_str());
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
    std::size_t cases = 25;
    std::size_t depth = 2;
    std::string dims = "128,128,128";
    std::string spacing = "0.5,0.5,0.5";
    std::string out;
    std::string vtp_dir;
    std::string patch = "28";
    double epsilon = 5.0;
    std::string ratios = "40,5,10";
};

int run_synth(const SynthArgs& a, std::uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.cases = a.cases;
    cfg.depth = a.depth;
    cfg.dims = parse_triple<std::size_t>(a.dims, "--dims");
    cfg.spacing = parse_triple<double>(a.spacing, "--spacing");
    cfg.seed = seed;
    cfg.validate();

    patchset::BuildOptions opt;
    opt.patch_shape = parse_patch(a.patch);
    opt.label.epsilon_mm = a.epsilon;
    opt.ratios = parse_ratios(a.ratios);
    opt.seed = seed;

    std::vector<patchset::CaseInput> inputs(cfg.cases);
    parallel_for(cfg.cases, [&](std::size_t i) {
        synth::SynthCase c = synth::make_case(cfg, i);
        inputs[i] = {c.id, std::move(c.volume), c.centerline, c.centerline};
    });
    if (!a.vtp_dir.empty()) {
        fs::create_directories(a.vtp_dir);
        for (const auto& c : inputs) synth::write_vtp_ascii(c.centerline, fs::path(a.vtp_dir) / (c.id + ".vtp"));
    }
    patchset::BuildResult r = patchset::build_dataset(inputs, opt);
    char note[160];
    std::snprintf(note, sizeof note, "synthetic: cases=%zu depth=%zu seed=%llu", cfg.cases, cfg.depth,
                  static_cast<unsigned long long>(seed));
    r.manifest.notes.push_back(note);
    write_dataset_outputs(r, a.out);
    return 0;
}

// ---- extract ----------------------------------------------------------------

struct ExtractArgs {
    std::string volume, centerline, pressure, id;
    std::string cases_csv;
    std::string points_frame = "lps";
    double epsilon = 5.0;
    std::string patch = "28";
    std::string ratios = "40,5,10";
    std::string out;
};

patchset::CaseInput load_case(const std::string& id, const fs::path& volume, const fs::path& centerline,
                              const fs::path& pressure, Frame frame) {
    patchset::CaseInput c;
    c.id = id;
    c.volume = ingest::read_nifti(volume).volume;
    c.centerline = ingest::read_vtp_ascii(centerline, frame);
    c.pressure_cloud = ingest::read_vtp_ascii(pressure, frame);
    if (!c.pressure_cloud.find_scalar(synth::kPressureArray))
        throw DataError(pressure.string() + " has no '" + synth::kPressureArray + "' point array");
    return c;
}

/// Batch manifest: CSV with header id,volume,centerline,pressure; relative
/// paths are resolved against the manifest's directory.
std::vector<patchset::CaseInput> load_case_list(const fs::path& csv, Frame frame) {
    std::ifstream in(csv, std::ios::binary);
    if (!in) throw ParseError(ParseErrc::Io, "cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line) || ingest::detail::split_csv_line(line) != std::vector<std::string>{"id", "volume", "centerline", "pressure"})
        throw ParseError(ParseErrc::Malformed, csv.string() + ": header must be id,volume,centerline,pressure");
    const fs::path base = csv.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    std::vector<std::array<std::string, 4>> rows;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = ingest::detail::split_csv_line(line);
        if (f.size() != 4) throw ParseError(ParseErrc::Malformed, csv.string() + " row " + std::to_string(row) + ": expected 4 fields");
        rows.push_back({f[0], f[1], f[2], f[3]});
    }
    if (rows.empty()) throw DataError(csv.string() + " lists no cases");
    std::vector<patchset::CaseInput> cases(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
        cases[i] = load_case(rows[i][0], resolve(rows[i][1]), resolve(rows[i][2]), resolve(rows[i][3]), frame);
    });
    return cases;
}

int run_extract(const ExtractArgs& a, std::uint64_t seed) {
    const Frame frame = parse_frame(a.points_frame);
    const bool single = !a.volume.empty() || !a.centerline.empty() || !a.pressure.empty();
    if (single == !a.cases_csv.empty())
        throw UsageError("give either --volume/--centerline/--pressure or --cases, not both");
    std::vector<patchset::CaseInput> cases;
    if (single) {
        if (a.volume.empty() || a.centerline.empty() || a.pressure.empty())
            throw UsageError("single-case extraction needs --volume, --centerline and --pressure");
        const std::string id = a.id.empty() ? fs::path(a.volume).stem().string() : a.id;
        cases.push_back(load_case(id, a.volume, a.centerline, a.pressure, frame));
    } else {
        cases = load_case_list(a.cases_csv, frame);
    }
    patchset::BuildOptions opt;
    opt.patch_shape = parse_patch(a.patch);
    opt.label.epsilon_mm = a.epsilon;
    opt.ratios = parse_ratios(a.ratios);
    opt.seed = seed;
    write_dataset_outputs(patchset::build_dataset(cases, opt), a.out);
    return 0;
}

// ---- split ------------------------------------------------------------------

int run_split(const std::string& data, const std::string& ratios, std::uint64_t seed) {
    ingest::Dataset ds = ingest::read_dataset(data);
    patchset::resplit(ds.manifest, ds.samples, parse_ratios(ratios), seed);
    ingest::write_dataset(ds.manifest, ds.samples, data);
    for (const auto& c : ds.manifest.cases) std::printf("%s %s\n", c.id.c_str(), to_string(c.split));
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data, model = "icd", out, trace;
    std::size_t epochs = 20;
    std::size_t batch = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double delta = 1.0;
    std::size_t noise_draws = 1;
    double final_lr_fraction = 1.0;
    std::size_t inference_samples = 1;
};

int run_train(const TrainArgs& a, std::uint64_t seed) {
    if (a.epochs == 0) throw UsageError("--epochs must be positive");
    const ingest::Dataset ds = ingest::read_dataset(a.data);
    const auto train = ds.select(Split::Train);
    icd::ModelConfig cfg = icd::ModelConfig::defaults(icd::parse_model_kind(a.model));
    cfg.patch_shape = ds.manifest.patch_shape;
    cfg.inference_samples = a.inference_samples;
    cfg.seed = seed;
    icd::Model<float> model(cfg);
    icd::fit_normalisation(model, train);

    icd::TrainOptions opt;
    opt.epochs = a.epochs;
    opt.batch_size = a.batch;
    opt.adamw.lr = a.lr;
    opt.adamw.weight_decay = a.weight_decay;
    opt.huber_delta = a.delta;
    opt.noise_draws = a.noise_draws;
    opt.final_lr_fraction = a.final_lr_fraction;
    opt.seed = seed;

    std::printf("training %s on %zu samples (%zu parameters)\n", icd::to_string(cfg.kind), train.size(),
                model.parameter_values());
    std::size_t epoch = 0, steps = 0;
    double sum = 0.0;
    auto flush_epoch = [&] {
        if (steps) std::printf("epoch %zu mean loss %.6f\n", epoch, sum / static_cast<double>(steps));
        std::fflush(stdout);
    };
    const auto trace = icd::train_model(model, train, opt, [&](const icd::TraceRow& r) {
        if (r.epoch != epoch) {
            flush_epoch();
            epoch = r.epoch;
            steps = 0;
            sum = 0.0;
        }
        sum += r.loss;
        ++steps;
    });
    flush_epoch();

    icd::save_model(model, a.out);
    if (!a.trace.empty()) {
        std::ofstream f(a.trace, std::ios::binary | std::ios::trunc);
        if (!f) throw ParseError(ParseErrc::Io, "cannot write " + a.trace);
        f << "epoch,step,loss\n";
        for (const auto& r : trace) f << r.epoch << ',' << r.step << ',' << ingest::detail::format_double(r.loss) << '\n';
    }
    return 0;
}

// ---- predict / eval / export-vis ---------------------------------------------

int run_predict(const std::string& model_path, const std::string& data, const std::string& split, const std::string& out,
                std::size_t inference_samples, std::uint64_t seed) {
    icd::Model<float> model = icd::load_model(model_path);
    if (inference_samples > 0) model.config.inference_samples = inference_samples;
    const ingest::Dataset ds = ingest::read_dataset(data);
    if (ds.manifest.patch_shape != model.config.patch_shape)
        throw DataError("dataset patch shape does not match the model's");
    const auto samples = ds.select(ingest::parse_split(split));
    if (samples.empty()) throw DataError("split '" + split + "' has no samples");
    const auto preds = icd::predict_samples(model, samples, seed);
    eval::write_predictions(preds, out);
    std::printf("wrote %zu predictions -> %s\n", preds.size(), out.c_str());
    return 0;
}

int run_eval(const std::string& preds_path, const std::string& report, bool table) {
    const auto preds = eval::read_predictions(preds_path);
    if (preds.empty()) throw DataError(preds_path + " has no predictions");
    const eval::ReportTable t = eval::case_report(preds);
    if (!report.empty()) {
        std::ofstream f(report, std::ios::binary | std::ios::trunc);
        if (!f) throw ParseError(ParseErrc::Io, "cannot write " + report);
        f << eval::to_json(t).dump(2) << '\n';
    }
    if (table || report.empty()) std::fputs(eval::format_table(t).c_str(), stdout);
    return 0;
}

int run_export(const std::string& preds_path, const std::string& case_id, const std::string& out,
               const std::string& thresholds) {
    std::vector<icd::PredictionRecord> rows;
    for (auto& p : eval::read_predictions(preds_path))
        if (p.case_id == case_id) rows.push_back(std::move(p));
    if (rows.empty()) throw DataError("no predictions for case '" + case_id + "' in " + preds_path);
    eval::ColorMapSpec cmap = eval::ColorMapSpec::from_label_std(rows);
    if (!thresholds.empty()) {
        const auto t = parse_triple<double>(thresholds, "--thresholds");
        cmap = {t[0], t[1], t[2]};
    }
    char comment[160];
    std::snprintf(comment, sizeof comment, "case %s |error| thresholds %.4g %.4g %.4g mmHg", case_id.c_str(), cmap.t1,
                  cmap.t2, cmap.t3);
    eval::write_ply(rows, cmap, out, comment);
    std::printf("wrote %zu vertices -> %s\n", rows.size(), out.c_str());
    return 0;
}

// ---- gradcheck ----------------------------------------------------------------

int run_gradcheck(const std::string& kind_name, std::size_t samples, std::size_t noise_draws, std::uint64_t seed) {
    icd::ModelConfig cfg = icd::small_config(icd::parse_model_kind(kind_name));
    cfg.seed = seed;
    nn::GradCheckOptions opt;
    opt.seed = seed;
    const auto report = icd::grad_check_model(icd::Model<double>(cfg), icd::random_samples(cfg, samples, seed), opt, noise_draws);
    for (const auto& e : report.entries)
        std::printf("%-34s checked %5zu skipped %3zu max rel err %.3e %s\n", e.name.c_str(), e.checked, e.skipped_kinks,
                    e.max_rel_error, e.passed ? "ok" : "FAIL");
    std::printf("%s: max relative error %.3e over %zu entries (tolerance %.0e)\n", report.passed() ? "PASS" : "FAIL",
                report.max_rel_error(), report.checked(), report.tolerance);
    if (!report.passed()) throw NumericError("gradient check failed");
    return 0;
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Usage: return 1;
        case ErrorKind::Data: return 2;
        case ErrorKind::Numeric: return 3;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Batches allocate and free large tensors every step; keep them on the
    // heap instead of paying for fresh mmap/munmap each time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

    CLI::App app{"coroflow: centerline pressure regression from angiography volumes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "coroflow 1.0");

    std::uint64_t seed = 42;
    auto seeded = [&](CLI::App* sub) { sub->add_option("--seed", seed, "random seed")->capture_default_str(); };

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--cases", sa.cases, "number of cases")->capture_default_str();
    synth_cmd->add_option("--depth", sa.depth, "bifurcation depth of each tree")->capture_default_str();
    synth_cmd->add_option("--dims", sa.dims, "volume dims X,Y,Z")->capture_default_str();
    synth_cmd->add_option("--spacing", sa.spacing, "voxel spacing SX,SY,SZ (mm)")->capture_default_str();
    synth_cmd->add_option("--out", sa.out, "dataset directory")->required();
    synth_cmd->add_option("--vtp", sa.vtp_dir, "also write each case's centerline VTP here");
    synth_cmd->add_option("--patch", sa.patch, "patch size N or D,H,W")->capture_default_str();
    synth_cmd->add_option("--epsilon", sa.epsilon, "label radius (mm)")->capture_default_str();
    synth_cmd->add_option("--ratios", sa.ratios, "train,val,test case weights")->capture_default_str();
    seeded(synth_cmd);

    ExtractArgs ea;
    auto* extract_cmd = app.add_subcommand("extract", "build a dataset from NIfTI volumes and VTP centerlines");
    extract_cmd->add_option("--volume", ea.volume, "NIfTI-1 volume (.nii)");
    extract_cmd->add_option("--centerline", ea.centerline, "centerline VTP");
    extract_cmd->add_option("--pressure", ea.pressure, "pressure point-cloud VTP");
    extract_cmd->add_option("--id", ea.id, "case id (default: volume file stem)");
    extract_cmd->add_option("--cases", ea.cases_csv, "batch mode: CSV id,volume,centerline,pressure");
    extract_cmd->add_option("--points-frame", ea.points_frame, "frame of VTP coordinates: lps or ras")->capture_default_str();
    extract_cmd->add_option("--epsilon", ea.epsilon, "label radius (mm)")->capture_default_str();
    extract_cmd->add_option("--patch", ea.patch, "patch size N or D,H,W")->capture_default_str();
    extract_cmd->add_option("--ratios", ea.ratios, "train,val,test case weights")->capture_default_str();
    extract_cmd->add_option("--out", ea.out, "dataset directory")->required();
    seeded(extract_cmd);

    std::string split_data, split_ratios = "40,5,10";
    auto* split_cmd = app.add_subcommand("split", "reassign case splits of a dataset");
    split_cmd->add_option("--data", split_data, "dataset directory")->required();
    split_cmd->add_option("--ratios", split_ratios, "train,val,test case weights")->capture_default_str();
    seeded(split_cmd);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train a model on the train split");
    train_cmd->add_option("--data", ta.data, "dataset directory")->required();
    train_cmd->add_option("--model", ta.model, "icd or cnn-mlp")->capture_default_str();
    train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
    train_cmd->add_option("--batch", ta.batch)->capture_default_str();
    train_cmd->add_option("--lr", ta.lr)->capture_default_str();
    train_cmd->add_option("--weight-decay", ta.weight_decay)->capture_default_str();
    train_cmd->add_option("--delta", ta.delta, "Huber knee")->capture_default_str();
    train_cmd->add_option("--noise-draws", ta.noise_draws, "ICD: (t, eps) draws per sample per step")->capture_default_str();
    train_cmd->add_option("--final-lr-fraction", ta.final_lr_fraction, "cosine decay target as a fraction of --lr")
        ->capture_default_str();
    train_cmd->add_option("--inference-samples", ta.inference_samples, "ICD: reverse chains averaged per point")
        ->capture_default_str();
    train_cmd->add_option("--out", ta.out, "model file")->required();
    train_cmd->add_option("--trace", ta.trace, "per-step loss CSV");
    seeded(train_cmd);

    std::string pm, pd, ps = "test", po;
    std::size_t pk = 0;
    auto* predict_cmd = app.add_subcommand("predict", "predict pressures for one split");
    predict_cmd->add_option("--model", pm, "model file")->required();
    predict_cmd->add_option("--data", pd, "dataset directory")->required();
    predict_cmd->add_option("--split", ps, "train, val or test")->capture_default_str();
    predict_cmd->add_option("--out", po, "predictions CSV")->required();
    predict_cmd->add_option("--inference-samples", pk, "override the model's reverse chains per point");
    seeded(predict_cmd);

    std::string ep, er;
    bool et = false;
    auto* eval_cmd = app.add_subcommand("eval", "case-wise metrics");
    eval_cmd->add_option("--preds", ep, "predictions CSV")->required();
    eval_cmd->add_option("--report", er, "JSON report path");
    eval_cmd->add_flag("--table", et, "print the aligned table");
    seeded(eval_cmd);

    std::string xp, xc, xo, xt;
    auto* export_cmd = app.add_subcommand("export-vis", "error-coloured PLY of one case");
    export_cmd->add_option("--preds", xp, "predictions CSV")->required();
    export_cmd->add_option("--case", xc, "case id")->required();
    export_cmd->add_option("--out", xo, "PLY path")->required();
    export_cmd->add_option("--thresholds", xt, "t1,t2,t3 in mmHg (default 0.5, 1, 2 label std)");
    seeded(export_cmd);

    std::string gk = "icd";
    std::size_t gs = 4, gd = 2;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of a reduced model");
    grad_cmd->add_option("--model", gk, "icd or cnn-mlp")->capture_default_str();
    grad_cmd->add_option("--samples", gs)->capture_default_str();
    grad_cmd->add_option("--noise-draws", gd)->capture_default_str();
    seeded(grad_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd) return run_synth(sa, seed);
        if (*extract_cmd) return run_extract(ea, seed);
        if (*split_cmd) return run_split(split_data, split_ratios, seed);
        if (*train_cmd) return run_train(ta, seed);
        if (*predict_cmd) return run_predict(pm, pd, ps, po, pk, seed);
        if (*eval_cmd) return run_eval(ep, er, et);
        if (*export_cmd) return run_export(xp, xc, xo, xt);
        if (*grad_cmd) return run_gradcheck(gk, gs, gd, seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
