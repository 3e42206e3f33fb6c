#include <doctest.h>

#include <atomic>
#include <cmath>

#include "apl/eval_phase.hpp"

using namespace apl;

namespace {

// Predictor that answers with the target of `designation` (or the assigned mapping).
Predictor oracle(const MappingSpec& spec, std::optional<Designation> designation) {
    return [spec, designation](std::span<const Sample> samples) {
        std::vector<int> out;
        for (const auto& s : samples) {
            if (spec.mapping(s.pair).kind == PairMapping::Kind::HeldOut) {
                out.push_back(apply_designation(s.key(), s.pair, designation.value_or(Designation::inferential()), spec));
            } else {
                out.push_back(designated_target(s.key(), s.pair, spec));
            }
        }
        return out;
    };
}

}  // namespace

TEST_CASE("eval samples follow the test split and are deterministic") {
    const auto spec = MappingSpec::standard();
    const auto a = build_eval_samples({4, 3}, spec, 300, 9);
    const auto b = build_eval_samples({4, 3}, spec, 300, 9);
    CHECK(a == b);
    for (const auto& s : a) {
        CHECK(s.pair == AnchorPair{4, 3});
        CHECK(s.key() % 7 == s.key_pos);
    }
    CHECK_FALSE(build_eval_samples({4, 3}, spec, 300, 10) == a);
    CHECK_FALSE(build_eval_samples({1, 2}, spec, 300, 9).front().pair == a.front().pair);
}

TEST_CASE("accuracy under a mapping") {
    const auto spec = MappingSpec::standard();
    const auto samples = build_eval_samples({4, 3}, spec, 500, 1);
    CHECK(accuracy_under_mapping(oracle(spec, Designation::symmetric()), {4, 3}, Designation::symmetric(), samples,
                                 spec) == 1.0);
    CHECK(accuracy_under_mapping(oracle(spec, Designation::symmetric()), {4, 3}, Designation::inferential(), samples,
                                 spec) == 0.0);
    const auto seen = build_eval_samples({3, 4}, spec, 200, 1);
    CHECK(accuracy_under_mapping(oracle(spec, std::nullopt), {3, 4}, std::nullopt, seen, spec) == 1.0);

    // a predictor that is right on every other sample
    Predictor half = [&](std::span<const Sample> s) {
        auto out = oracle(spec, Designation::inferential())(s);
        for (std::size_t i = 0; i < out.size(); i += 2) out[i] = 0;
        return out;
    };
    CHECK(accuracy_under_mapping(half, {4, 3}, Designation::inferential(), samples, spec) == doctest::Approx(0.5));

    auto mixed = samples;
    mixed.push_back(seen.front());
    CHECK_THROWS_AS(accuracy_under_mapping(oracle(spec, {}), {4, 3}, Designation::inferential(), mixed, spec),
                    std::invalid_argument);
}

TEST_CASE("untrained model scores near chance") {
    ModelConfig c;
    c.d_model = 32;
    c.d_ff = 64;
    c.d_k = 16;
    c.d_v = 16;
    c.gamma = 0.8;
    Rng rng(2);
    const auto params = init_params<float>(c, rng);
    const auto spec = MappingSpec::standard();
    const auto samples = build_eval_samples({1, 2}, spec, 2000, 3);
    CHECK(accuracy_under_mapping(params, {1, 2}, std::nullopt, samples, spec) < 1.0 / 120 + 0.03);
}

TEST_CASE("symmetric designation equals the mirror pair's mapping") {
    const auto spec = MappingSpec::standard();
    for (int x = kItemMin; x <= kItemMax; ++x) {
        CHECK(apply_designation(x, {4, 3}, Designation::symmetric(), spec) == designated_target(x, {3, 4}, spec));
    }
}

TEST_CASE("generalization report") {
    const auto spec = MappingSpec::standard();
    EvalConfig cfg;
    cfg.samples_per_pair = 100;
    const auto sym = generalization_report(oracle(spec, Designation::symmetric()), spec, cfg);
    CHECK(sym.seen_accuracy() == 1.0);
    CHECK(sym.held_out_accuracy(Designation::symmetric()) == 1.0);
    CHECK(sym.held_out_accuracy(Designation::inferential()) == 0.0);
    CHECK_FALSE(sym.shadow());
    CHECK(sym.find({3, 4}, kAssignedDesignation) == 1.0);
    CHECK(sym.cells.size() == 15 + 2);

    const auto inf = generalization_report(oracle(spec, Designation::inferential()), spec, cfg);
    CHECK(inf.held_out_accuracy(Designation::inferential()) == 1.0);
    CHECK(inf.held_out_accuracy(Designation::symmetric()) == 0.0);

    Predictor noisy = [](std::span<const Sample> s) { return std::vector<int>(s.size(), 0); };
    CHECK(generalization_report(noisy, spec, cfg).shadow());

    CHECK(MappingAccuracyReport::from_csv(sym.to_csv()) == sym);
    CHECK_THROWS(MappingAccuracyReport::from_csv("nope\n1,2"));

    // with both directions held out there is no mirror to score against
    auto both = MappingSpec::standard();
    both.set({3, 4}, PairMapping::held_out());
    const auto r = generalization_report(oracle(both, Designation::inferential()), both, cfg);
    CHECK_FALSE(r.held_out_accuracy(Designation::symmetric()).has_value());
    CHECK(r.held_out_accuracy(Designation::inferential()) == 1.0);
}

TEST_CASE("learning-rate grid") {
    const auto g = lr_grid({});
    REQUIRE(g.size() == 9);
    CHECK(g.front() == 1e-4);
    CHECK(g.back() == 3e-4);
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] - g[i - 1] == doctest::Approx(2.5e-5));
    CHECK(lr_grid({1, 2e-4, 3e-4}) == std::vector<double>{2e-4});

    const auto r = lr_grid({5, 1e-4, 3e-4, true}, 7);
    CHECK(r == lr_grid({5, 1e-4, 3e-4, true}, 7));
    for (double v : r) {
        CHECK(v >= 1e-4);
        CHECK(v <= 3e-4);
    }
    CHECK_THROWS_AS(lr_grid({0, 1e-4, 3e-4}), ConfigError);
    CHECK_THROWS_AS(lr_grid({3, 3e-4, 1e-4}), ConfigError);
}

TEST_CASE("aggregation is max over lr, then mean over seeds") {
    // seed 0: lr accuracies {0.2, 0.9}; seed 1: {0.6, 0.4}
    //   max-then-mean = (0.9 + 0.6) / 2 = 0.75; mean-then-max = max(0.4, 0.65) = 0.65
    std::vector<ScanRun> runs{
        {0.5, 2, 0, 1e-4, 0.2, 0.1, 1.0, {}},
        {0.5, 2, 0, 2e-4, 0.9, 0.3, 1.0, {}},
        {0.5, 2, 1, 1e-4, 0.6, 0.8, 1.0, {}},
        {0.5, 2, 1, 2e-4, 0.4, 0.0, 1.0, {}},
    };
    const std::vector<double> gammas{0.5};
    const std::vector<int> depths{2};
    const auto cells = aggregate_max_then_mean(runs, gammas, depths);
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].inferential_acc == doctest::Approx(0.75));
    CHECK(cells[0].symmetric_acc == doctest::Approx((0.3 + 0.8) / 2));
    CHECK(cells[0].seeds_used == 2);

    runs.push_back({0.5, 2, 1, 3e-4, 0.0, 0.0, 0.0, "diverged"});
    const auto with_failure = aggregate_max_then_mean(runs, gammas, depths);
    CHECK(with_failure[0].failed_runs == 1);
    CHECK(with_failure[0].inferential_acc == doctest::Approx(0.75));
}

TEST_CASE("phase scan runs every grid point and records failures") {
    ScanConfig cfg;
    cfg.gammas = {0.3, 0.8};
    cfg.depths = {2, 3};
    cfg.seeds = {0, 1};
    cfg.lrs = {3, 1e-4, 3e-4};
    cfg.workers = 3;
    std::atomic<int> calls{0};
    const ScanJob job = [&](double gamma, int depth, std::uint64_t seed, double lr) {
        ++calls;
        if (depth == 3 && seed == 1 && lr > 2.9e-4) throw std::runtime_error("boom");
        const double inf = gamma > 0.5 ? lr * 1000 : 0.0;
        return ScanRun{gamma, depth, seed, lr, inf, 1.0 - inf, 1.0, {}};
    };
    const auto result = phase_scan(cfg, job);
    CHECK(calls == 2 * 2 * 2 * 3);
    CHECK(result.runs.size() == 24);
    CHECK(result.cell(0.8, 2).inferential_acc == doctest::Approx(0.3));
    CHECK(result.cell(0.3, 2).symmetric_acc == doctest::Approx(1.0));
    CHECK(result.cell(0.8, 3).failed_runs == 1);
    CHECK(result.cell(0.8, 3).inferential_acc == doctest::Approx((0.3 + 0.2) / 2));
    CHECK_THROWS(result.cell(0.4, 2));
    CHECK(result.aggregate_csv().rfind("gamma,depth,", 0) == 0);
    CHECK(result.raw_csv().find("boom") != std::string::npos);

    cfg.workers = 1;
    const auto serial = phase_scan(cfg, job);
    for (std::size_t i = 0; i < serial.cells.size(); ++i) {
        CHECK(serial.cells[i].inferential_acc == result.cells[i].inferential_acc);
    }
}
