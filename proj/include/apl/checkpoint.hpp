#pragma once

// Checkpoint file (little-endian):
//   "APLC" | version u32 | metadata length u32 | metadata (UTF-8 JSON)
//   then per tensor: name length u16 | name | dtype u8 (0 = f32, 1 = f64) | rank u8 | dims u32... | raw data

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "apl/transformer.hpp"

namespace apl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& config);
/// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointMeta {
    ModelConfig model;
    std::uint64_t step = 0;
    int epoch = 0;
    nlohmann::json extra = nlohmann::json::object();
};

template <typename T>
struct Checkpoint {
    CheckpointMeta meta;
    TransformerParams<T> params;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerParams<T>& params, const CheckpointMeta& meta);

/// Loads into precision T regardless of the stored dtype.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace apl
