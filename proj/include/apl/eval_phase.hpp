#pragma once

// Accuracy under designated mappings, seen/held-out generalization reports,
// and the (gamma x depth) phase scan with max-over-lr / mean-over-seed aggregation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apl/datagen.hpp"
#include "apl/transformer.hpp"

namespace apl {

/// Batch predictor: one predicted token per sample.
using Predictor = std::function<std::vector<int>(std::span<const Sample>)>;

template <typename T>
Predictor model_predictor(const TransformerParams<T>& params) {
    return [&params](std::span<const Sample> s) { return predict_samples(params, s); };
}

/// Test-split samples (key on its residue slot) for one pair. Held-out pairs get
/// inferential targets; scoring recomputes targets under the requested designation.
std::vector<Sample> build_eval_samples(AnchorPair pair, const MappingSpec& spec, std::size_t count, std::uint64_t seed,
                                       int seq_len = kDefaultSeqLen);

/// Fraction of samples whose prediction equals the target of the key under
/// `designation` (nullopt = the pair's assigned mapping). Mixed-pair sets are rejected.
double accuracy_from_predictions(std::span<const int> predictions, std::span<const Sample> samples, AnchorPair pair,
                                 const std::optional<Designation>& designation, const MappingSpec& spec);

double accuracy_under_mapping(const Predictor& predictor, AnchorPair pair,
                              const std::optional<Designation>& designation, std::span<const Sample> samples,
                              const MappingSpec& spec);

template <typename T>
double accuracy_under_mapping(const TransformerParams<T>& params, AnchorPair pair,
                              const std::optional<Designation>& designation, std::span<const Sample> samples,
                              const MappingSpec& spec) {
    return accuracy_under_mapping(model_predictor(params), pair, designation, samples, spec);
}

struct EvalConfig {
    std::size_t samples_per_pair = 2000;
    std::uint64_t seed = 0;
    std::vector<Designation> designations{Designation::inferential(), Designation::symmetric()};
};

struct AccuracyCell {
    AnchorPair pair;
    std::string designation;  // "assigned" for seen pairs, else Designation::to_string()
    double accuracy = 0.0;
    std::size_t count = 0;
    bool operator==(const AccuracyCell&) const = default;
};

struct MappingAccuracyReport {
    std::vector<AccuracyCell> cells;

    /// Mean test-split accuracy over seen pairs under their assigned mappings.
    double seen_accuracy() const;
    /// Mean over held-out pairs of the accuracy under `designation`; nullopt if no such cell.
    std::optional<double> held_out_accuracy(const Designation& designation) const;
    std::optional<double> find(AnchorPair pair, const std::string& designation) const;
    /// Data generalization below 90% (the "shadow zone").
    bool shadow() const { return seen_accuracy() < 0.9; }

    std::string to_csv() const;
    static MappingAccuracyReport from_csv(const std::string& text);
    bool operator==(const MappingAccuracyReport&) const = default;
};

inline constexpr const char* kAssignedDesignation = "assigned";

MappingAccuracyReport generalization_report(const Predictor& predictor, const MappingSpec& spec,
                                            const EvalConfig& config, int seq_len = kDefaultSeqLen);

template <typename T>
MappingAccuracyReport generalization_report(const TransformerParams<T>& params, const MappingSpec& spec,
                                            const EvalConfig& config) {
    return generalization_report(model_predictor(params), spec, config, params.config().seq_len);
}

struct LrSpec {
    int count = 9;
    double lo = 1e-4;
    double hi = 3e-4;
    bool random_uniform = false;
};

/// Evenly spaced peak learning rates over [lo, hi] (or seeded uniform draws).
std::vector<double> lr_grid(const LrSpec& spec, std::uint64_t seed = 0);

struct ScanRun {
    double gamma = 0.0;
    int depth = 0;
    std::uint64_t seed = 0;
    double lr = 0.0;
    double inferential_acc = 0.0;
    double symmetric_acc = 0.0;
    double seen_acc = 0.0;
    std::string error;  // non-empty when the run failed
};

struct PhaseCell {
    double gamma = 0.0;
    int depth = 0;
    double inferential_acc = 0.0;
    double symmetric_acc = 0.0;
    double seen_acc = 0.0;
    int seeds_used = 0;
    int failed_runs = 0;
};

struct PhaseGridResult {
    std::vector<double> gammas;
    std::vector<int> depths;
    std::vector<double> lrs;
    std::vector<std::uint64_t> seeds;
    std::vector<ScanRun> runs;
    std::vector<PhaseCell> cells;

    const PhaseCell& cell(double gamma, int depth) const;
    std::string raw_csv() const;
    std::string aggregate_csv() const;
};

/// Per (gamma, depth, seed): max over learning rates of each metric separately;
/// then the mean of those maxima over seeds. Failed runs are skipped.
std::vector<PhaseCell> aggregate_max_then_mean(std::span<const ScanRun> runs, std::span<const double> gammas,
                                               std::span<const int> depths);

struct ScanConfig {
    std::vector<double> gammas{0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    std::vector<int> depths{2, 3, 4, 5, 6};
    LrSpec lrs;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    int workers = 1;
};

/// Trains and evaluates one grid point; exceptions are recorded in ScanRun::error.
using ScanJob = std::function<ScanRun(double gamma, int depth, std::uint64_t seed, double lr)>;

PhaseGridResult phase_scan(const ScanConfig& config, const ScanJob& job);

}  // namespace apl
