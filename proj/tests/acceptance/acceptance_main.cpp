// Acceptance checks, one PASS/FAIL line per criterion.
//
// Criteria 7-10 need trained desk-scale models. Runs are cached under
// $APL_ACCEPTANCE_DIR/g{gamma}-lr{lr}-s{seed}; a cached run is reused only when its
// config snapshot hashes to the expected config and its final checkpoint exists,
// otherwise it is trained here (about 25 minutes per run on one core).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "apl/analysis.hpp"
#include "apl/checkpoint.hpp"
#include "apl/config.hpp"
#include "apl/manifest.hpp"
#include "apl/pipeline.hpp"
#include "gradcheck.hpp"

using namespace apl;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& name, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("%s  %2d  %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
}

void info(const std::string& text) {
    std::printf("      info: %s\n", text.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// ---- 1-6: property suite ---------------------------------------------------

void criterion_data_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const int offsets[5] = {0, 5, 1, -2, -8};
    const auto spec = MappingSpec::standard();
    long mismatches = 0, checked = 0;
    for (int a = 1; a <= 4; ++a)
        for (int b = 1; b <= 4; ++b)
            for (int x = kItemMin; x <= kItemMax; ++x) {
                const AnchorPair p{a, b};
                const int brute = x + offsets[a] + offsets[b];
                int got = 0;
                if (p == AnchorPair{3, 4}) {
                    got = designated_target(x, p, spec);
                    mismatches += got != x - 6;
                } else {
                    const auto d = spec.mapping(p).kind == PairMapping::Kind::HeldOut
                                       ? std::optional<Designation>(Designation::inferential())
                                       : std::nullopt;
                    got = designated_target(x, p, spec, d);
                    mismatches += got != brute;
                }
                ++checked;
            }
    const double s = seconds_since(t0);
    report(1, mismatches == 0 && s < 1.0, "data oracle equivalence",
           std::to_string(checked) + " (pair, key) cases, " + std::to_string(mismatches) + " mismatches, " +
               fmt("%.4f s", s));
}

void criterion_split() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rule = SplitRule::for_seq_len(kDefaultSeqLen);
    int overlaps = 0, cases = 0;
    for (int x = kItemMin; x <= kItemMax; ++x)
        for (int pos = 0; pos < kDefaultSeqLen; ++pos) {
            overlaps += split_check(x, pos, rule, SlotCheck::Train) && split_check(x, pos, rule, SlotCheck::TestKeySlot);
            ++cases;
        }
    const double s = seconds_since(t0);
    report(2, overlaps == 0 && s < 1.0, "split disjointness",
           std::to_string(cases) + " (x, pos) cases, " + std::to_string(overlaps) + " admissible in both, " +
               fmt("%.4f s", s));
}

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = apl::testing::model_gradcheck(apl::testing::gradcheck_model(), 2024, 3, 1e-3);
    const double s = seconds_since(t0);
    report(3, result.max_rel_error < 1e-4 && s < 60.0, "gradient fidelity",
           "max relative error " + fmt("%.3g", result.max_rel_error) + " (per parameter tensor, worst " +
               result.worst + ") over " + std::to_string(result.checked) + " entries; worst single entry " +
               fmt("%.3g", result.max_entry_rel_error) + fmt(" (max abs %.2g)", result.max_abs_error) + ", " +
               fmt("%.2f s", s));
}

void criterion_attention_ln() {
    ModelConfig c;  // full-size architecture, 64-bit
    Rng rng(77);
    const auto params = init_params<double>(c, rng);
    std::uniform_int_distribution<int> tok(0, c.vocab - 1);
    double worst_row = 0.0, worst_future = 0.0, worst_mean = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::vector<Token> tokens(static_cast<std::size_t>(c.seq_len));
        for (auto& t : tokens) t = static_cast<Token>(tok(rng));
        ActivationTrace<double> trace;
        forward(params, tokens, &trace);
        for (const auto& layer : trace.layers) {
            const auto& a = layer.attn;
            for (std::size_t r = 0; r < a.rows(); ++r) {
                double sum = 0.0;
                for (std::size_t col = 0; col < a.cols(); ++col) {
                    sum += a(r, col);
                    if (col > r) worst_future = std::max(worst_future, std::abs(a(r, col)));
                }
                worst_row = std::max(worst_row, std::abs(sum - 1.0));
            }
            for (const auto* n : {&layer.ao_normalized, &layer.do_normalized}) {
                for (std::size_t r = 0; r < n->rows(); ++r) {
                    double mean = 0.0;
                    for (std::size_t col = 0; col < n->cols(); ++col) mean += (*n)(r, col);
                    worst_mean = std::max(worst_mean, std::abs(mean / static_cast<double>(n->cols())));
                }
            }
        }
    }
    report(4, worst_row <= 1e-6 && worst_future == 0.0 && worst_mean < 1e-5, "attention/LN invariants",
           "max |row sum - 1| " + fmt("%.2g", worst_row) + ", max future mass " + fmt("%.2g", worst_future) +
               ", max |pre-affine mean| " + fmt("%.2g", worst_mean));
}

void criterion_init() {
    std::ostringstream detail;
    bool pass = true;
    for (double gamma : {0.3, 0.5, 0.8}) {
        Rng rng(substream_seed(5, "acceptance.init") + static_cast<std::uint64_t>(gamma * 10));
        const auto t = init_normal<double>({100000}, 400, gamma, rng);
        double mean = 0.0;
        for (double v : t.data) mean += v;
        mean /= static_cast<double>(t.size());
        double sq = 0.0;
        for (double v : t.data) sq += (v - mean) * (v - mean);
        const double sd = std::sqrt(sq / static_cast<double>(t.size() - 1));
        const double expected = std::pow(1.0 / 400.0, gamma);
        const double rel = std::abs(sd - expected) / expected;
        pass = pass && rel < 0.05;
        detail << "gamma " << gamma << ": std " << fmt("%.5g", sd) << " vs " << fmt("%.5g", expected) << " ("
               << fmt("%.2f%%", rel * 100) << ")  ";
    }
    report(5, pass, "initialization statistics", detail.str());
}

void criterion_scheduler() {
    const TrainConfig c;
    const bool peak_ok = lr_at(10, c) == 2.5e-4;
    const bool end_ok = lr_at(210, c) == 1e-5;

    std::vector<Parameter<double>> ps;
    ps.emplace_back("w", Tensor<double>::matrix(3, 4, 0.7), 3);
    auto state = OptimState<double>::zeros_like(std::span<const Parameter<double>>(ps));
    TrainConfig wd;
    wd.weight_decay = 0.01;
    const double lr = 1e-4;
    adamw_step(std::span<Parameter<double>>(ps), state, lr, wd);
    const double expected = 0.7 * (1.0 - lr * wd.weight_decay);
    bool decay_ok = true;
    for (double v : ps[0].value.data) decay_ok = decay_ok && v == expected;

    Rng rng(9);
    std::normal_distribution<double> nd(0.0, 25.0);
    double worst_norm = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        for (auto& g : ps[0].grad.data) g = nd(rng);
        clip_global_norm(std::span<Parameter<double>>(ps), 1.0);
        worst_norm = std::max(worst_norm, global_grad_norm(std::span<const Parameter<double>>(ps)));
    }
    const bool clip_ok = worst_norm <= 1.0 + 1e-6;
    report(6, peak_ok && end_ok && decay_ok && clip_ok, "scheduler/optimizer contracts",
           "lr(10) " + fmt("%.6g", lr_at(10, c)) + ", lr(210) " + fmt("%.6g", lr_at(210, c)) +
               ", zero-grad decay exact: " + (decay_ok ? "yes" : "no") + ", max clipped norm " +
               fmt("%.9f", worst_norm));
}

// ---- 7-10: desk-scale phase runs -------------------------------------------

struct PhaseRun {
    std::string name;
    fs::path dir;
    fs::path checkpoint;
    MappingAccuracyReport report;
    double seen = 0.0, inferential = 0.0, symmetric = 0.0, pair34 = 0.0;
};

fs::path acceptance_dir() {
    const char* env = std::getenv("APL_ACCEPTANCE_DIR");
    return env && *env ? fs::path(env) : fs::path("acceptance_runs");
}

ExperimentConfig phase_config(double gamma, double peak_lr, std::uint64_t seed) {
    ExperimentConfig c;
    apply_budget(c, Budget::Desk);
    c.model.gamma = gamma;
    c.model.depth = 2;
    c.train.peak_lr = peak_lr;
    c.set_seed(seed);
    c.validate();
    return c;
}

bool cached(const fs::path& dir, const ExperimentConfig& c) {
    if (!fs::exists(dir / kManifestName) || !fs::exists(dir / kConfigSnapshotName)) return false;
    try {
        if (config_hash(read_config_snapshot(dir)) != config_hash(c)) return false;
    } catch (const std::exception&) {
        return false;
    }
    const auto ckpt = latest_checkpoint(dir);
    return ckpt && ckpt->filename() == checkpoint_name(c.train.total_epochs);
}

PhaseRun obtain_run(double gamma, const std::string& lr_text, std::uint64_t seed) {
    const ExperimentConfig c = phase_config(gamma, std::stod(lr_text), seed);
    PhaseRun run;
    run.name = fmt("g%.1f", gamma) + "-lr" + lr_text + "-s" + std::to_string(seed);
    run.dir = acceptance_dir() / run.name;
    if (cached(run.dir, c)) {
        info(run.name + ": reusing cached run");
    } else {
        info(run.name + ": training (" + std::to_string(c.train.total_epochs) + " epochs)");
        fs::remove_all(run.dir);
        const auto t0 = std::chrono::steady_clock::now();
        run_training(c, run.dir);
        info(run.name + fmt(": trained in %.0f s", seconds_since(t0)));
    }
    run.checkpoint = *latest_checkpoint(run.dir);
    const auto cp = load_checkpoint<float>(run.checkpoint);
    run.report = generalization_report(cp.params, c.mapping_spec(), c.eval);
    run.seen = run.report.seen_accuracy();
    run.inferential = run.report.held_out_accuracy(Designation::inferential()).value_or(0.0);
    run.symmetric = run.report.held_out_accuracy(Designation::symmetric()).value_or(0.0);
    run.pair34 = run.report.find({3, 4}, kAssignedDesignation).value_or(0.0);
    info(run.name + fmt(": seen %.4f", run.seen) + fmt(", (4,3) inferential %.4f", run.inferential) +
         fmt(", symmetric %.4f", run.symmetric) + fmt(", (3,4) x-6 %.4f", run.pair34));
    return run;
}

struct PhaseOutcome {
    bool pass = false;
    PhaseRun selected;
    std::string detail;
};

// Best of three peak lrs; a second seed is tried only if the first misses on all three.
// Without a qualifying run, the fallback prefers runs that fit the seen pairs (seen >= 0.9),
// then the higher target accuracy; a model that never fit the task belongs to no phase.
PhaseOutcome phase_search(double gamma, const std::function<bool(const PhaseRun&)>& meets,
                          const std::function<double(const PhaseRun&)>& score) {
    PhaseOutcome out;
    bool have = false;
    int tried = 0;
    for (std::uint64_t seed : {0ull, 1ull}) {
        for (const char* lr : {"2e-4", "1e-4", "3e-4"}) {
            PhaseRun run = obtain_run(gamma, lr, seed);
            ++tried;
            if (meets(run)) {
                out.pass = true;
                out.selected = run;
                out.detail = run.name + " meets all thresholds (" + std::to_string(tried) + " run(s) tried)";
                return out;
            }
            const auto rank = [&](const PhaseRun& r) { return score(r) + (r.seen >= 0.9 ? 10.0 : 0.0); };
            if (!have || rank(run) > rank(out.selected)) {
                out.selected = run;
                have = true;
            }
        }
    }
    out.detail = "no run among " + std::to_string(tried) + " meets all thresholds; fallback " + out.selected.name;
    return out;
}

std::string accuracy_line(const PhaseRun& r) {
    return fmt("seen %.3f", r.seen) + fmt(", (4,3) sym %.3f", r.symmetric) + fmt(", inf %.3f", r.inferential);
}

void mechanistic_orderings(const PhaseRun& sym, const PhaseRun& inf, const std::string& caveat) {
    const auto sym_cp = load_checkpoint<double>(sym.checkpoint);
    const auto inf_cp = load_checkpoint<double>(inf.checkpoint);
    const auto spec = MappingSpec::standard();

    const double c_sym = condensation_report(neuron_rows(sym_cp.params.at("layer.0.WQ"))).score;
    const double c_inf = condensation_report(neuron_rows(inf_cp.params.at("layer.0.WQ"))).score;
    const bool a = c_inf > c_sym;

    const ProbeOptions probe{30, 40, 2, substream_seed(0, "analysis")};
    const double g_sym = fused_similarity_gap(sym_cp.params, spec, probe);
    const double g_inf = fused_similarity_gap(inf_cp.params, spec, probe);
    const bool b = g_inf >= 0.3 && g_sym < 0.1;

    const double m_sym = top_k_mass(embedding_spectrum(sym_cp.params).values, 5);
    const double m_inf = top_k_mass(embedding_spectrum(inf_cp.params).values, 5);
    const bool c = m_inf > m_sym;

    report(10, a && b && c, "mechanistic orderings",
           std::string("(a) W^Q(1) condensation inf ") + fmt("%.4f", c_inf) + " vs sym " + fmt("%.4f", c_sym) +
               (a ? " ok" : " WRONG") + "; (b) fused gap inf " + fmt("%.3f", g_inf) + " (>= 0.3), sym " +
               fmt("%.3f", g_sym) + " (< 0.1)" + (b ? " ok" : " MISSED") + "; (c) top-5 embedding mass inf " +
               fmt("%.4f", m_inf) + " vs sym " + fmt("%.4f", m_sym) + (c ? " ok" : " WRONG") + caveat);

    // Further qualitative readings, not acceptance criteria.
    const std::vector<Token> probe_seq = probe_tokens(probe_template(9, probe.seed), 99, {4, 3}, 2);
    const auto flow_sym = attention_flow(sym_cp.params, probe_seq);
    const auto& last = flow_sym.layers[0];
    const std::size_t n = last.rows() - 1;
    info(fmt("symmetric run, layer-1 last-token attention on anchors: %.3f", last(n, 3) + last(n, 4)));
    const auto flow_inf = attention_flow(inf_cp.params, probe_seq);
    info(fmt("inferential run, layer-1 anchor rows attending to the key: %.3f / ", flow_inf.layers[0](3, 2)) +
         fmt("%.3f", flow_inf.layers[0](4, 2)));
    const auto ao = attention_output_projection(sym_cp.params, 10000, probe.seed);
    info(fmt("symmetric run, (a,b)/(b,a) centroid ratio in the layer-1 attention output: %.3f",
             symmetric_centroid_ratio(ao)));
}

}  // namespace

int main() {
    tune_allocator();
    std::printf("acceptance runs: %s\n", fs::absolute(acceptance_dir()).string().c_str());
    criterion_data_oracle();
    criterion_split();
    criterion_gradients();
    criterion_attention_ln();
    criterion_init();
    criterion_scheduler();

    const auto sym = phase_search(
        0.5, [](const PhaseRun& r) { return r.seen >= 0.9 && r.symmetric >= 0.9 && r.inferential <= 0.3; },
        [](const PhaseRun& r) { return r.symmetric; });
    report(7, sym.pass, "symmetric phase (gamma 0.5)", accuracy_line(sym.selected) + "; " + sym.detail);

    const auto inf = phase_search(
        0.8, [](const PhaseRun& r) { return r.seen >= 0.9 && r.inferential >= 0.9 && r.symmetric <= 0.3; },
        [](const PhaseRun& r) { return r.inferential; });
    report(8, inf.pass, "inferential phase (gamma 0.8)", accuracy_line(inf.selected) + "; " + inf.detail);

    std::string caveat;
    if (!sym.pass) caveat += " [gamma 0.5 checkpoint " + sym.selected.name + " is a fallback, criterion 7 unmet]";
    if (!inf.pass) caveat += " [gamma 0.8 checkpoint " + inf.selected.name + " is a fallback, criterion 8 unmet]";

    report(9, sym.selected.pair34 >= 0.95 && inf.selected.pair34 >= 0.95, "non-inferential seen pair (3,4)",
           fmt("x-6 accuracy: symmetric run %.4f", sym.selected.pair34) +
               fmt(", inferential run %.4f (>= 0.95)", inf.selected.pair34) + caveat);

    mechanistic_orderings(sym.selected, inf.selected, caveat);

    std::printf("%s: %d criterion(s) failed\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
    return failures ? 1 : 0;
}
