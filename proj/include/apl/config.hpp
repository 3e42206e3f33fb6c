#pragma once

// Experiment configuration: one JSON document with data/model/train/eval/scan
// sections. Defaults reproduce the full-scale setup; the "desk" budget shrinks
// the model, data and schedule for single-machine runs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "apl/datagen.hpp"
#include "apl/eval_phase.hpp"
#include "apl/trainer.hpp"
#include "apl/transformer.hpp"

namespace apl {

struct DataSection {
    std::size_t samples = 900000;
    int seq_len = kDefaultSeqLen;
    /// "a,b" -> "inferential" | "held_out" | "offset<c>", applied over the standard mapping.
    std::map<std::string, std::string> mapping_overrides;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataSection data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    ScanConfig scan;

    ExperimentConfig() { set_seed(0); }
    /// Root seed; training and evaluation seeds follow it.
    void set_seed(std::uint64_t s) {
        seed = s;
        train.seed = s;
        eval.seed = substream_seed(s, "eval");
    }
    MappingSpec mapping_spec() const;
    /// Named substreams of the root seed.
    std::uint64_t data_seed() const { return substream_seed(seed, "data"); }
    std::uint64_t analysis_seed() const { return substream_seed(seed, "analysis"); }

    void validate() const;
};

enum class Budget { Paper, Desk };
Budget parse_budget(const std::string& text);

/// Desk preset: d_model 128, d_ff 384, d_k = d_v = 64, 100k samples, 60 epochs
/// (3 warmup + 57 cosine), batch 256.
void apply_budget(ExperimentConfig& config, Budget budget);

nlohmann::json to_json(const ExperimentConfig& config);
/// Unknown keys anywhere raise ConfigError naming the full key path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// SHA-256 of the canonical (sorted-key, compact) JSON form.
std::string config_hash(const ExperimentConfig& config);

AnchorPair parse_pair(const std::string& text);
PairMapping parse_pair_mapping(const std::string& text);

}  // namespace apl
