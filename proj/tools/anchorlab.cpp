// anchorlab: command-line workbench for the anchor-function experiments.
//
//   anchorlab gen-data --budget desk --out runs/a
//   anchorlab train --out runs/a --gamma 0.8 --depth 2
//   anchorlab eval --run runs/a
//   anchorlab analyze fused --run runs/a --pair-a 3,3 --pair-b 2,2
//
// Failures print one JSON line on stderr: {"error":"<kind>","message":"..."}.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "apl/analysis.hpp"
#include "apl/binary_io.hpp"
#include "apl/checkpoint.hpp"
#include "apl/config.hpp"
#include "apl/manifest.hpp"
#include "apl/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace apl;

namespace {

struct BadUsage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Overrides {
    std::string config_path;
    std::string budget;
    std::optional<double> gamma;
    std::optional<int> depth;
    std::optional<double> lr_mult;
    std::optional<double> peak_lr;
    std::optional<double> wd;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<std::size_t> samples;
    std::string out;
    bool force = false;
};

// Config precedence: --config file, else the run's snapshot, else defaults; then --budget, then flags.
ExperimentConfig resolve_config(const Overrides& o, const fs::path& run_dir = {}) {
    ExperimentConfig c;
    if (!o.config_path.empty()) {
        c = load_experiment_config(o.config_path);
    } else if (!run_dir.empty() && fs::exists(run_dir / kConfigSnapshotName)) {
        c = read_config_snapshot(run_dir);
    }
    if (!o.budget.empty()) apply_budget(c, parse_budget(o.budget));
    if (o.gamma) c.model.gamma = *o.gamma;
    if (o.depth) c.model.depth = *o.depth;
    if (o.lr_mult) c.train.lr_multiplier = *o.lr_mult;
    if (o.peak_lr) c.train.peak_lr = *o.peak_lr;
    if (o.wd) c.train.weight_decay = *o.wd;
    if (o.seed) c.set_seed(*o.seed);
    if (o.samples) c.data.samples = *o.samples;
    if (o.epochs) {
        // Keep the warmup share and stretch the cosine phase to fill the rest.
        c.train.total_epochs = *o.epochs;
        c.train.warmup_epochs = std::min(c.train.warmup_epochs, std::max(0, *o.epochs - 1));
        c.train.cosine_epochs = *o.epochs - c.train.warmup_epochs;
    }
    c.validate();
    return c;
}

fs::path require_out(const Overrides& o) {
    if (o.out.empty()) throw BadUsage("--out is required");
    return o.out;
}

int env_workers() {
    const char* v = std::getenv("APL_WORKERS");
    if (v == nullptr || *v == '\0') return 1;
    try {
        const int n = std::stoi(v);
        if (n < 1) throw BadUsage("APL_WORKERS must be >= 1");
        return n;
    } catch (const std::logic_error&) {
        throw BadUsage(std::string("APL_WORKERS is not an integer: ") + v);
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw BadUsage(std::string(flag) + ": bad list entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw BadUsage(std::string(flag) + ": empty list");
    return out;
}

fs::path resolve_checkpoint(const std::string& run, const std::string& ckpt) {
    if (!ckpt.empty()) return ckpt;
    if (run.empty()) throw BadUsage("--run or --ckpt is required");
    auto latest = latest_checkpoint(run);
    if (!latest) throw IoError("no checkpoint under " + (fs::path(run) / "ckpt").string());
    return *latest;
}

// Mapping used by analyses: from the run snapshot if there is one, else the standard mapping.
ExperimentConfig analysis_config(const std::string& run, const fs::path& ckpt) {
    for (const fs::path dir : {fs::path(run), ckpt.parent_path().parent_path()}) {
        if (!dir.empty() && fs::exists(dir / kConfigSnapshotName)) return read_config_snapshot(dir);
    }
    return ExperimentConfig{};
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

json report_json(const MappingAccuracyReport& r) {
    json held = json::object();
    for (const auto& c : r.cells) {
        if (c.designation == kAssignedDesignation) continue;
        held[c.pair.to_string()][c.designation] = c.accuracy;
    }
    json seen = json::object();
    for (const auto& c : r.cells) {
        if (c.designation == kAssignedDesignation) seen[c.pair.to_string()] = c.accuracy;
    }
    return json{{"seen_acc", r.seen_accuracy()},
                {"inferential_acc", r.held_out_accuracy(Designation::inferential()).value_or(NAN)},
                {"symmetric_acc", r.held_out_accuracy(Designation::symmetric()).value_or(NAN)},
                {"shadow", r.shadow()},
                {"held_out", held},
                {"seen", seen}};
}

// ---- subcommands ------------------------------------------------------------

void cmd_gen_data(const Overrides& o, std::size_t test_samples) {
    const fs::path out = require_out(o);
    const ExperimentConfig c = resolve_config(o, out);
    guard_output(out / "data" / "train.apld", o.force);
    fs::create_directories(out / "data");
    write_config_snapshot(out, c);
    const Dataset train = make_train_dataset(c);
    save_dataset(out / "data" / "train.apld", train);
    const std::size_t n_test = test_samples > 0 ? test_samples : std::max<std::size_t>(1, c.data.samples / 10);
    save_dataset(out / "data" / "test.apld", make_test_dataset(c, n_test));
    write_manifest(out, run_manifest(out));
    emit({{"train", (out / "data" / "train.apld").string()},
          {"test", (out / "data" / "test.apld").string()},
          {"train_samples", train.samples.size()},
          {"test_samples", n_test},
          {"sha256", sha256_file(out / "data" / "train.apld")}});
}

void cmd_train(const Overrides& o, int checkpoint_every, bool quiet) {
    const fs::path out = require_out(o);
    ExperimentConfig c = resolve_config(o, out);
    if (checkpoint_every >= 0) c.train.checkpoint_every = checkpoint_every;
    guard_output(out / "metrics.jsonl", o.force);
    if (o.force && fs::exists(out / "ckpt")) fs::remove_all(out / "ckpt");
    TrainHooks hooks;
    if (!quiet) {
        hooks.on_epoch = [&](const EpochMetrics& m) {
            std::fprintf(stderr, "epoch %d/%d lr %.3g loss %.4f seen %.3f inf %.3f sym %.3f (%.0fs)\n", m.epoch,
                         c.train.total_epochs, m.lr, m.train_loss, m.seen_test_acc, m.unseen_inferential_acc,
                         m.unseen_symmetric_acc, m.wall_seconds);
        };
    }
    const TrainResult r = run_training(c, out, hooks);
    const EpochMetrics& last = r.metrics.back();
    emit({{"checkpoint", r.final_checkpoint.string()},
          {"epochs", last.epoch},
          {"train_loss", last.train_loss},
          {"config_hash", config_hash(c)}});
}

void cmd_eval(const Overrides& o, const std::string& run, const std::string& ckpt_flag, std::size_t samples) {
    const fs::path ckpt = resolve_checkpoint(run, ckpt_flag);
    ExperimentConfig c = analysis_config(run, ckpt);
    if (o.seed) c.set_seed(*o.seed);
    if (samples > 0) c.eval.samples_per_pair = samples;
    const auto cp = load_checkpoint<float>(ckpt);
    const auto report = generalization_report(cp.params, c.mapping_spec(), c.eval);
    const fs::path out_dir = !o.out.empty() ? fs::path(o.out) : (!run.empty() ? fs::path(run) : ckpt.parent_path());
    const fs::path csv = out_dir / "eval.csv";
    guard_output(csv, o.force);
    fs::create_directories(out_dir);
    write_text_file(csv, report.to_csv());
    json j = report_json(report);
    j["checkpoint"] = ckpt.string();
    j["csv"] = csv.string();
    emit(j);
}

struct ScanFlags {
    std::string gammas, depths, seeds;
    int lr_count = 0;
    double lr_lo = 0.0, lr_hi = 0.0;
    bool lr_random = false;
};

void cmd_scan(const Overrides& o, const ScanFlags& f) {
    const fs::path out = require_out(o);
    ExperimentConfig base = resolve_config(o, out);
    ScanConfig& s = base.scan;
    if (!f.gammas.empty()) s.gammas = parse_list<double>(f.gammas, "--gammas");
    if (!f.depths.empty()) s.depths = parse_list<int>(f.depths, "--depths");
    if (!f.seeds.empty()) s.seeds = parse_list<std::uint64_t>(f.seeds, "--seeds");
    if (f.lr_count > 0) s.lrs.count = f.lr_count;
    if (f.lr_lo > 0.0) s.lrs.lo = f.lr_lo;
    if (f.lr_hi > 0.0) s.lrs.hi = f.lr_hi;
    if (f.lr_random) s.lrs.random_uniform = true;
    s.workers = env_workers();
    base.validate();
    guard_output(out / "scan" / "phase.csv", o.force);
    fs::create_directories(out / "scan");
    write_config_snapshot(out, base);

    const ScanJob job = [&base](double gamma, int depth, std::uint64_t seed, double lr) {
        ExperimentConfig c = base;
        c.model.gamma = gamma;
        c.model.depth = depth;
        c.set_seed(seed);
        c.train.peak_lr = lr;
        c.train.metrics_eval_samples = 0;
        const TrainResult r = train(c.model, c.train, make_train_dataset(c), {});
        const auto rep = generalization_report(r.params, c.mapping_spec(), c.eval);
        ScanRun run{gamma, depth, seed, lr, 0.0, 0.0, rep.seen_accuracy(), {}};
        run.inferential_acc = rep.held_out_accuracy(Designation::inferential()).value_or(0.0);
        run.symmetric_acc = rep.held_out_accuracy(Designation::symmetric()).value_or(0.0);
        std::fprintf(stderr, "gamma %.2f depth %d seed %llu lr %.3g: seen %.3f inf %.3f sym %.3f\n", gamma, depth,
                     static_cast<unsigned long long>(seed), lr, run.seen_acc, run.inferential_acc, run.symmetric_acc);
        return run;
    };
    const PhaseGridResult result = phase_scan(s, job);
    write_text_file(out / "scan" / "raw.csv", result.raw_csv());
    write_text_file(out / "scan" / "phase.csv", result.aggregate_csv());
    write_manifest(out, run_manifest(out));
    std::size_t failed = 0;
    for (const auto& r : result.runs) failed += r.error.empty() ? 0 : 1;
    emit({{"phase_csv", (out / "scan" / "phase.csv").string()}, {"runs", result.runs.size()}, {"failed", failed}});
}

struct AnalyzeFlags {
    std::string kind;
    std::string run, ckpt;
    std::string param;
    double threshold = 0.7;
    std::string pair_a = "3,3", pair_b = "2,2";
    int anchor_a = 1, anchor_b = 2;
    int key_lo = 30, key_hi = 40, key_pos = 2;
    std::string tokens;
    std::string source = "embed";
    std::size_t count = 10000;
};

std::string fmt_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::vector<Token> parse_tokens(const std::string& text) {
    std::vector<Token> out;
    for (int v : parse_list<int>(text, "--tokens")) {
        if (v < 0 || v > 65535) throw BadUsage("--tokens: out of range " + std::to_string(v));
        out.push_back(static_cast<Token>(v));
    }
    return out;
}

void write_analysis(const fs::path& run_dir, const std::string& stem, const std::string& csv, json meta, bool force) {
    const fs::path dir = run_dir / "analysis";
    const fs::path path = dir / (stem + ".csv");
    guard_output(path, force);
    fs::create_directories(dir);
    write_text_file(path, csv);
    write_text_file(dir / (stem + ".meta.json"), meta.dump(2) + "\n");
    meta["csv"] = path.string();
    emit(meta);
}

void cmd_analyze(const Overrides& o, const AnalyzeFlags& f) {
    const fs::path ckpt = resolve_checkpoint(f.run, f.ckpt);
    const ExperimentConfig cfg = analysis_config(f.run, ckpt);
    const std::uint64_t seed = o.seed ? substream_seed(*o.seed, "analysis") : cfg.analysis_seed();
    const fs::path run_dir = !o.out.empty() ? fs::path(o.out) : (!f.run.empty() ? fs::path(f.run) : ckpt.parent_path());
    const auto cp = load_checkpoint<double>(ckpt);
    const auto& params = cp.params;
    const MappingSpec spec = cfg.mapping_spec();
    json meta{{"kind", f.kind}, {"checkpoint", ckpt.string()}, {"seed", seed}};
    const ProbeOptions probe{f.key_lo, f.key_hi, f.key_pos, seed};
    const json probe_meta{{"key_lo", f.key_lo}, {"key_hi", f.key_hi}, {"key_pos", f.key_pos}};

    if (f.kind == "flow") {
        std::vector<Token> tokens;
        if (!f.tokens.empty()) {
            tokens = parse_tokens(f.tokens);
        } else {
            tokens = probe_tokens(probe_template(params.config().seq_len, seed), 35, {4, 3}, f.key_pos);
        }
        const FlowReport flow = attention_flow(params, tokens);
        std::ostringstream os;
        os << "layer,row,col,value,row_label,col_label\n" << std::setprecision(10);
        for (std::size_t l = 0; l < flow.layers.size(); ++l) {
            const auto& a = flow.layers[l];
            for (std::size_t r = 0; r < a.rows(); ++r) {
                for (std::size_t c = 0; c < a.cols(); ++c) {
                    os << l << ',' << r << ',' << c << ',' << a.data[r * a.cols() + c] << ',' << flow.labels[r] << ','
                       << flow.labels[c] << '\n';
                }
            }
        }
        std::string joined;
        for (Token t : tokens) joined += (joined.empty() ? "" : "_") + std::to_string(t);
        meta["tokens"] = tokens;
        meta["key_pos"] = flow.key_pos;
        meta["labels"] = flow.labels;
        write_analysis(run_dir, "flow-" + joined, os.str(), meta, o.force);
    } else if (f.kind == "condense") {
        const std::string name = f.param.empty() ? "layer.0.WQ" : f.param;
        if (!params.contains(name)) throw BadUsage("--param: unknown parameter " + name);
        const auto rep = condensation_report(neuron_rows(params.at(name)), f.threshold);
        std::vector<std::size_t> sizes;
        for (const auto& g : rep.groups) sizes.push_back(g.size());
        meta["param"] = name;
        meta["threshold"] = f.threshold;
        meta["score"] = rep.score;
        meta["group_sizes"] = sizes;
        meta["permutation"] = rep.permutation;
        write_analysis(run_dir, "condense-" + name + "-t" + fmt_num(f.threshold), rep.permuted.to_csv(), meta, o.force);
    } else if (f.kind == "fused") {
        const AnchorPair a = parse_pair(f.pair_a), b = parse_pair(f.pair_b);
        const Heatmap h = fused_similarity_heatmap(params, a, b, spec, probe);
        meta["pair_a"] = a.to_string();
        meta["pair_b"] = b.to_string();
        meta["probe"] = probe_meta;
        meta["masked_mean"] = h.masked_mean();
        meta["unmasked_mean"] = h.unmasked_mean();
        meta["gap"] = h.gap();
        meta["pooled_gap"] = fused_similarity_gap(params, spec, probe);
        write_analysis(run_dir,
                       "fused-" + std::to_string(a.first) + std::to_string(a.second) + "-" + std::to_string(b.first) +
                           std::to_string(b.second),
                       h.sim.to_csv(), meta, o.force);
    } else if (f.kind == "valuesim") {
        const Heatmap h = value_row_similarity(params, f.anchor_a, f.anchor_b, spec, probe);
        meta["anchor_a"] = f.anchor_a;
        meta["anchor_b"] = f.anchor_b;
        meta["probe"] = probe_meta;
        meta["masked_mean"] = h.masked_mean();
        meta["unmasked_mean"] = h.unmasked_mean();
        meta["gap"] = h.gap();
        write_analysis(run_dir, "valuesim-" + std::to_string(f.anchor_a) + "-" + std::to_string(f.anchor_b),
                       h.sim.to_csv(), meta, o.force);
    } else if (f.kind == "spectrum") {
        // With several checkpoints in the run, emit the whole trajectory.
        std::vector<std::string> paths;
        if (f.ckpt.empty() && fs::is_directory(fs::path(f.run) / "ckpt")) {
            for (const auto& e : fs::directory_iterator(fs::path(f.run) / "ckpt")) {
                if (e.path().extension() == ".aplc") paths.push_back(e.path().string());
            }
        } else {
            paths.push_back(ckpt.string());
        }
        const SpectrumSeries series = embedding_spectrum_series(paths);
        std::ostringstream os;
        os << "epoch,index,value\n" << std::setprecision(10);
        for (std::size_t s = 0; s < series.epochs.size(); ++s) {
            for (std::size_t i = 0; i < series.spectra[s].size(); ++i) {
                os << series.epochs[s] << ',' << i << ',' << series.spectra[s][i] << '\n';
            }
        }
        const auto& final_spec = series.spectra.back();
        meta["epochs"] = series.epochs;
        meta["top5_mass"] = top_k_mass(final_spec, 5);
        meta["top10"] = std::vector<double>(final_spec.begin(), final_spec.begin() + std::min<std::size_t>(10, final_spec.size()));
        write_analysis(run_dir, "spectrum-embed", os.str(), meta, o.force);
    } else if (f.kind == "svd") {
        std::ostringstream os;
        os << "param,index,value\n" << std::setprecision(10);
        json tops = json::object();
        for (const auto& rep : weight_singular_values(params)) {
            if (!f.param.empty() && rep.name != f.param) continue;
            for (std::size_t i = 0; i < rep.values.size(); ++i) os << rep.name << ',' << i << ',' << rep.values[i] << '\n';
            tops[rep.name] = rep.values.empty() ? 0.0 : rep.values.front();
        }
        if (tops.empty()) throw BadUsage("--param: no matrix named " + f.param);
        meta["largest"] = tops;
        write_analysis(run_dir, "svd-" + (f.param.empty() ? std::string("all") : f.param), os.str(), meta, o.force);
    } else if (f.kind == "embed2d") {
        Projection2D proj;
        if (f.source == "embed") {
            proj = embedding_projection(params);
        } else if (f.source == "attn") {
            proj = attention_output_projection(params, f.count, seed);
            meta["count"] = f.count;
            meta["symmetric_centroid_ratio"] = symmetric_centroid_ratio(proj);
        } else {
            throw BadUsage("--source must be embed or attn");
        }
        meta["source"] = f.source;
        meta["explained"] = proj.explained;
        meta["degenerate"] = proj.degenerate;
        write_analysis(run_dir, "embed2d-" + f.source, proj.to_csv(), meta, o.force);
    } else {
        throw BadUsage("analyze: unknown kind '" + f.kind + "'");
    }
}

json tensor_json(const Tensor<double>& t) {
    json rows = json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
        rows.push_back(std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
                                           t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())));
    }
    return rows;
}

void cmd_trace(const Overrides& o, const std::string& run, const std::string& ckpt_flag, const std::string& tokens_text) {
    if (tokens_text.empty()) throw BadUsage("--tokens is required");
    const fs::path ckpt = resolve_checkpoint(run, ckpt_flag);
    const auto cp = load_checkpoint<double>(ckpt);
    const std::vector<Token> tokens = parse_tokens(tokens_text);
    ActivationTrace<double> trace;
    const Tensor<double> logits = forward(cp.params, tokens, &trace);
    json layers = json::array();
    for (const auto& l : trace.layers) {
        layers.push_back({{"attn", tensor_json(l.attn)}, {"ao", tensor_json(l.ao)}, {"do", tensor_json(l.dout)}});
    }
    const json dump{{"checkpoint", ckpt.string()},
                    {"tokens", tokens},
                    {"embedded", tensor_json(trace.embedded)},
                    {"layers", layers},
                    {"last_logits", tensor_json(logits)[logits.rows() - 1]},
                    {"prediction", argmax_row(logits, logits.rows() - 1)}};
    if (o.out.empty()) {
        emit(dump);
        return;
    }
    guard_output(o.out, o.force);
    write_text_file(o.out, dump.dump() + "\n");
    emit({{"trace", o.out}, {"prediction", dump["prediction"]}});
}

void cmd_manifest(const std::string& run, bool verify) {
    if (run.empty()) throw BadUsage("--run is required");
    if (!verify) {
        const RunManifest m = run_manifest(run);
        write_manifest(run, m);
        emit({{"manifest", (fs::path(run) / kManifestName).string()},
              {"artifacts", m.artifacts.size()},
              {"missing", m.missing},
              {"config_hash", m.config_hash}});
        return;
    }
    const ManifestCheck check = verify_manifest(run);
    const json j{{"ok", check.ok()}, {"mismatched", check.mismatched}, {"missing", check.missing},
                 {"untracked", check.untracked}};
    if (!check.ok()) throw IoError("manifest verification failed: " + j.dump());
    emit(j);
}

// Long-form matrix CSV (row,col,value,...) -> grey heatmap; projection CSV (index,x,y,label) -> scatter.
void cmd_render(const std::string& csv_path, const std::string& out, bool force) {
    if (csv_path.empty() || out.empty()) throw BadUsage("render needs --csv and --out");
    guard_output(out, force);
    std::istringstream in(read_text_file(csv_path));
    std::string header, line;
    std::getline(in, header);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!cells.empty()) rows.push_back(cells);
    }
    if (rows.empty()) throw IoError(csv_path + ": no data rows");

    int width = 0, height = 0;
    std::vector<unsigned char> pixels;
    if (header.rfind("row,col,value", 0) == 0) {
        for (const auto& r : rows) {
            height = std::max(height, std::stoi(r[0]) + 1);
            width = std::max(width, std::stoi(r[1]) + 1);
        }
        pixels.assign(static_cast<std::size_t>(width * height), 0);
        for (const auto& r : rows) {
            const double v = std::clamp(std::stod(r[2]), -1.0, 1.0);
            pixels[static_cast<std::size_t>(std::stoi(r[0]) * width + std::stoi(r[1]))] =
                static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
        }
    } else if (header.rfind("index,x,y", 0) == 0) {
        width = height = 256;
        pixels.assign(static_cast<std::size_t>(width * height), 255);
        double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
        for (const auto& r : rows) {
            lo_x = std::min(lo_x, std::stod(r[1]));
            hi_x = std::max(hi_x, std::stod(r[1]));
            lo_y = std::min(lo_y, std::stod(r[2]));
            hi_y = std::max(hi_y, std::stod(r[2]));
        }
        const double sx = hi_x > lo_x ? 250.0 / (hi_x - lo_x) : 0.0, sy = hi_y > lo_y ? 250.0 / (hi_y - lo_y) : 0.0;
        for (const auto& r : rows) {
            const int px = 3 + static_cast<int>((std::stod(r[1]) - lo_x) * sx);
            const int py = 252 - static_cast<int>((std::stod(r[2]) - lo_y) * sy);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) pixels[static_cast<std::size_t>((py + dy) * width + px + dx)] = 0;
        }
    } else {
        throw BadUsage("render: unrecognised CSV header '" + header + "'");
    }
    std::ofstream os(out, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + out);
    os << "P5\n" << width << ' ' << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    emit({{"image", out}, {"width", width}, {"height", height}});
}

int fail(const char* kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"anchorlab: anchor-function compositional generalization workbench"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--budget", o.budget, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--gamma", o.gamma, "Initialization rate gamma");
    app.add_option("--depth", o.depth, "Number of layers");
    app.add_option("--lr-mult", o.lr_mult, "Peak lr as a multiple of base_lr");
    app.add_option("--peak-lr", o.peak_lr, "Absolute peak learning rate");
    app.add_option("--wd", o.wd, "Weight decay");
    app.add_option("--seed", o.seed, "Root seed");
    app.add_option("--epochs", o.epochs, "Total epochs (cosine phase absorbs the change)");
    app.add_option("--samples", o.samples, "Training samples");
    app.add_option("--out", o.out, "Run directory (or output file for trace)");
    app.add_flag("--force", o.force, "Overwrite existing outputs");

    std::size_t test_samples = 0;
    auto* gen = app.add_subcommand("gen-data", "Generate train/test datasets");
    gen->add_option("--test-samples", test_samples, "Test-split samples (default: samples / 10)");

    int checkpoint_every = -1;
    bool quiet = false;
    auto* tr = app.add_subcommand("train", "Train a model into a run directory");
    tr->add_option("--checkpoint-every", checkpoint_every, "Checkpoint period in epochs (0 = final only)");
    tr->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

    std::string run, ckpt;
    std::size_t eval_samples = 0;
    auto* ev = app.add_subcommand("eval", "Accuracy under designated mappings");
    ev->add_option("--run", run, "Run directory");
    ev->add_option("--ckpt", ckpt, "Checkpoint (default: latest in the run)");
    ev->add_option("--samples", eval_samples, "Samples per pair");

    ScanFlags sf;
    auto* sc = app.add_subcommand("scan", "Phase scan over gamma x depth (workers: APL_WORKERS)");
    sc->add_option("--gammas", sf.gammas, "Comma-separated gammas");
    sc->add_option("--depths", sf.depths, "Comma-separated depths");
    sc->add_option("--seeds", sf.seeds, "Comma-separated seeds");
    sc->add_option("--lr-count", sf.lr_count, "Learning rates per cell");
    sc->add_option("--lr-lo", sf.lr_lo, "Lowest peak lr");
    sc->add_option("--lr-hi", sf.lr_hi, "Highest peak lr");
    sc->add_flag("--lr-random", sf.lr_random, "Draw lrs uniformly instead of a grid");

    AnalyzeFlags af;
    auto* an = app.add_subcommand("analyze", "Mechanistic analyses of a checkpoint");
    an->add_option("kind", af.kind, "flow | condense | fused | valuesim | spectrum | svd | embed2d")
        ->required()
        ->check(CLI::IsMember({"flow", "condense", "fused", "valuesim", "spectrum", "svd", "embed2d"}));
    an->add_option("--run", af.run, "Run directory");
    an->add_option("--ckpt", af.ckpt, "Checkpoint (default: latest in the run)");
    an->add_option("--param", af.param, "Parameter name (condense, svd)");
    an->add_option("--threshold", af.threshold, "Grouping threshold on |cos| (condense)");
    an->add_option("--pair-a", af.pair_a, "Row anchor pair a,b (fused)");
    an->add_option("--pair-b", af.pair_b, "Column anchor pair a,b (fused)");
    an->add_option("--anchor-a", af.anchor_a, "Row anchor (valuesim)");
    an->add_option("--anchor-b", af.anchor_b, "Column anchor (valuesim)");
    an->add_option("--key-lo", af.key_lo, "Lowest probe key");
    an->add_option("--key-hi", af.key_hi, "Highest probe key");
    an->add_option("--key-pos", af.key_pos, "Probe key position");
    an->add_option("--tokens", af.tokens, "Comma-separated input sequence (flow)");
    an->add_option("--source", af.source, "embed | attn (embed2d)");
    an->add_option("--count", af.count, "Sampled sequences (embed2d --source attn)");

    std::string trace_tokens;
    auto* tc = app.add_subcommand("trace", "Dump one forward pass as JSON");
    tc->add_option("--run", run, "Run directory");
    tc->add_option("--ckpt", ckpt, "Checkpoint");
    tc->add_option("--tokens", trace_tokens, "Comma-separated input sequence");

    bool verify = false;
    auto* mf = app.add_subcommand("manifest", "Write or verify manifest.json");
    mf->add_option("--run", run, "Run directory");
    mf->add_flag("--verify", verify, "Compare checksums against the stored manifest");

    std::string csv_path;
    auto* rd = app.add_subcommand("render", "Render an analysis CSV to a PGM image");
    rd->add_option("--csv", csv_path, "Analysis CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (gen->parsed()) cmd_gen_data(o, test_samples);
        else if (tr->parsed()) cmd_train(o, checkpoint_every, quiet);
        else if (ev->parsed()) cmd_eval(o, run, ckpt, eval_samples);
        else if (sc->parsed()) cmd_scan(o, sf);
        else if (an->parsed()) cmd_analyze(o, af);
        else if (tc->parsed()) cmd_trace(o, run, ckpt, trace_tokens);
        else if (mf->parsed()) cmd_manifest(run, verify);
        else if (rd->parsed()) cmd_render(csv_path, o.out, o.force);
    } catch (const BadUsage& e) {
        return fail("usage", e.what(), 2);
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const CollisionError& e) {
        return fail("exists", e.what(), 3);
    } catch (const IoError& e) {
        return fail("io", e.what(), 4);
    } catch (const TrainingError& e) {
        return fail("training", e.what(), 5);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
