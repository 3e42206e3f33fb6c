#include "apl/eval_phase.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace apl {

std::vector<Sample> build_eval_samples(AnchorPair pair, const MappingSpec& spec, std::size_t count, std::uint64_t seed,
                                       int seq_len) {
    const SplitRule rule = SplitRule::for_seq_len(seq_len);
    const bool held_out = spec.mapping(pair).kind == PairMapping::Kind::HeldOut;
    const std::optional<Designation> fill = held_out ? std::optional(Designation::inferential()) : std::nullopt;
    const std::uint64_t stream =
        indexed_seed(substream_seed(seed, "eval"), static_cast<std::uint64_t>(pair.first * 1000 + pair.second));
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng{indexed_seed(stream, i)};
        out.push_back(generate_sample(rng, pair, spec, rule, Split::Test, seq_len, fill));
    }
    return out;
}

double accuracy_from_predictions(std::span<const int> predictions, std::span<const Sample> samples, AnchorPair pair,
                                 const std::optional<Designation>& designation, const MappingSpec& spec) {
    if (samples.empty()) throw std::invalid_argument("accuracy: empty sample set");
    if (predictions.size() != samples.size()) throw std::invalid_argument("accuracy: prediction count mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].pair != pair) {
            throw std::invalid_argument("accuracy: sample " + std::to_string(i) + " carries pair " +
                                        samples[i].pair.to_string() + ", expected " + pair.to_string());
        }
        const int target = designation ? apply_designation(samples[i].key(), pair, *designation, spec)
                                       : designated_target(samples[i].key(), pair, spec);
        if (predictions[i] == target) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double accuracy_under_mapping(const Predictor& predictor, AnchorPair pair,
                              const std::optional<Designation>& designation, std::span<const Sample> samples,
                              const MappingSpec& spec) {
    for (const auto& s : samples) {
        if (s.pair != pair) throw std::invalid_argument("accuracy: mixed-pair sample set");
    }
    const auto predictions = predictor(samples);
    return accuracy_from_predictions(predictions, samples, pair, designation, spec);
}

double MappingAccuracyReport::seen_accuracy() const {
    double total = 0.0;
    int n = 0;
    for (const auto& c : cells) {
        if (c.designation == kAssignedDesignation) {
            total += c.accuracy;
            ++n;
        }
    }
    return n ? total / n : 0.0;
}

std::optional<double> MappingAccuracyReport::held_out_accuracy(const Designation& designation) const {
    const std::string key = designation.to_string();
    double total = 0.0;
    int n = 0;
    for (const auto& c : cells) {
        if (c.designation == key) {
            total += c.accuracy;
            ++n;
        }
    }
    if (!n) return std::nullopt;
    return total / n;
}

std::optional<double> MappingAccuracyReport::find(AnchorPair pair, const std::string& designation) const {
    for (const auto& c : cells) {
        if (c.pair == pair && c.designation == designation) return c.accuracy;
    }
    return std::nullopt;
}

std::string MappingAccuracyReport::to_csv() const {
    std::ostringstream os;
    os << "first,second,designation,accuracy,count\n";
    os << std::setprecision(17);
    for (const auto& c : cells) {
        os << c.pair.first << ',' << c.pair.second << ',' << c.designation << ',' << c.accuracy << ',' << c.count
           << '\n';
    }
    return os.str();
}

MappingAccuracyReport MappingAccuracyReport::from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "first,second,designation,accuracy,count") {
        throw std::invalid_argument("accuracy report: bad CSV header");
    }
    MappingAccuracyReport report;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string f[5];
        for (auto& field : f) {
            if (!std::getline(row, field, ',')) throw std::invalid_argument("accuracy report: short row '" + line + "'");
        }
        report.cells.push_back({{std::stoi(f[0]), std::stoi(f[1])}, f[2], std::stod(f[3]), std::stoul(f[4])});
    }
    return report;
}

MappingAccuracyReport generalization_report(const Predictor& predictor, const MappingSpec& spec,
                                            const EvalConfig& config, int seq_len) {
    MappingAccuracyReport report;
    for (const auto& [pair, mapping] : spec.entries()) {
        const auto samples = build_eval_samples(pair, spec, config.samples_per_pair, config.seed, seq_len);
        const auto predictions = predictor(samples);
        if (mapping.kind != PairMapping::Kind::HeldOut) {
            report.cells.push_back({pair, kAssignedDesignation,
                                    accuracy_from_predictions(predictions, samples, pair, std::nullopt, spec),
                                    samples.size()});
            continue;
        }
        for (const auto& d : config.designations) {
            if (d.kind == Designation::Kind::Symmetric &&
                spec.mapping(pair.reversed()).kind == PairMapping::Kind::HeldOut) {
                continue;  // mirror pair has no mapping to copy
            }
            report.cells.push_back(
                {pair, d.to_string(), accuracy_from_predictions(predictions, samples, pair, d, spec), samples.size()});
        }
    }
    return report;
}

std::vector<double> lr_grid(const LrSpec& spec, std::uint64_t seed) {
    if (spec.count < 1 || !(spec.lo > 0) || spec.hi < spec.lo) {
        throw ConfigError("scan.lrs: need count >= 1 and 0 < lo <= hi");
    }
    std::vector<double> out;
    if (spec.random_uniform) {
        Rng rng = make_rng(seed, "scan.lr");
        std::uniform_real_distribution<double> dist(spec.lo, spec.hi);
        for (int i = 0; i < spec.count; ++i) out.push_back(dist(rng));
        std::sort(out.begin(), out.end());
        return out;
    }
    if (spec.count == 1) return {spec.lo};
    const double step = (spec.hi - spec.lo) / (spec.count - 1);
    for (int i = 0; i < spec.count; ++i) out.push_back(i + 1 == spec.count ? spec.hi : spec.lo + step * i);
    return out;
}

std::vector<PhaseCell> aggregate_max_then_mean(std::span<const ScanRun> runs, std::span<const double> gammas,
                                               std::span<const int> depths) {
    std::vector<PhaseCell> cells;
    for (double g : gammas) {
        for (int d : depths) {
            PhaseCell cell{g, d, 0.0, 0.0, 0.0, 0, 0};
            // seed -> per-metric max over lrs
            std::map<std::uint64_t, std::array<double, 3>> best;
            for (const auto& r : runs) {
                if (r.gamma != g || r.depth != d) continue;
                if (!r.error.empty()) {
                    ++cell.failed_runs;
                    continue;
                }
                auto [it, inserted] = best.try_emplace(r.seed, std::array<double, 3>{-1.0, -1.0, -1.0});
                auto& b = it->second;
                b[0] = std::max(b[0], r.inferential_acc);
                b[1] = std::max(b[1], r.symmetric_acc);
                b[2] = std::max(b[2], r.seen_acc);
            }
            for (const auto& [seed, b] : best) {
                cell.inferential_acc += b[0];
                cell.symmetric_acc += b[1];
                cell.seen_acc += b[2];
            }
            cell.seeds_used = static_cast<int>(best.size());
            if (cell.seeds_used) {
                cell.inferential_acc /= cell.seeds_used;
                cell.symmetric_acc /= cell.seeds_used;
                cell.seen_acc /= cell.seeds_used;
            }
            cells.push_back(cell);
        }
    }
    return cells;
}

const PhaseCell& PhaseGridResult::cell(double gamma, int depth) const {
    for (const auto& c : cells) {
        if (c.gamma == gamma && c.depth == depth) return c;
    }
    throw std::out_of_range("no phase cell for gamma/depth");
}

std::string PhaseGridResult::raw_csv() const {
    std::ostringstream os;
    os << "gamma,depth,seed,lr,inferential_acc,symmetric_acc,seen_acc,error\n" << std::setprecision(10);
    for (const auto& r : runs) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << r.gamma << ',' << r.depth << ',' << r.seed << ',' << r.lr << ',' << r.inferential_acc << ','
           << r.symmetric_acc << ',' << r.seen_acc << ',' << err << '\n';
    }
    return os.str();
}

std::string PhaseGridResult::aggregate_csv() const {
    std::ostringstream os;
    os << "gamma,depth,inferential_acc,symmetric_acc,seen_acc,shadow,seeds_used,failed_runs\n" << std::setprecision(10);
    for (const auto& c : cells) {
        os << c.gamma << ',' << c.depth << ',' << c.inferential_acc << ',' << c.symmetric_acc << ',' << c.seen_acc
           << ',' << (c.seen_acc < 0.9 ? 1 : 0) << ',' << c.seeds_used << ',' << c.failed_runs << '\n';
    }
    return os.str();
}

PhaseGridResult phase_scan(const ScanConfig& config, const ScanJob& job) {
    if (config.gammas.empty() || config.depths.empty() || config.seeds.empty()) {
        throw ConfigError("scan: gammas, depths and seeds must be non-empty");
    }
    PhaseGridResult result;
    result.gammas = config.gammas;
    result.depths = config.depths;
    result.seeds = config.seeds;
    result.lrs = lr_grid(config.lrs, config.seeds.front());

    struct Job {
        double gamma;
        int depth;
        std::uint64_t seed;
        double lr;
    };
    std::vector<Job> jobs;
    for (double g : config.gammas)
        for (int d : config.depths)
            for (auto s : config.seeds)
                for (double lr : result.lrs) jobs.push_back({g, d, s, lr});

    result.runs.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex write_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const Job& j = jobs[i];
            ScanRun run{j.gamma, j.depth, j.seed, j.lr, 0.0, 0.0, 0.0, {}};
            try {
                run = job(j.gamma, j.depth, j.seed, j.lr);
                run.gamma = j.gamma;
                run.depth = j.depth;
                run.seed = j.seed;
                run.lr = j.lr;
            } catch (const std::exception& e) {
                run.error = e.what();
            }
            std::lock_guard lock(write_mutex);
            result.runs[i] = std::move(run);
        }
    };
    const int n_workers = std::max(1, std::min<int>(config.workers, static_cast<int>(jobs.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }
    result.cells = aggregate_max_then_mean(result.runs, result.gammas, result.depths);
    return result;
}

}  // namespace apl
