#pragma once

// Run-directory plumbing shared by the CLI and the acceptance harness:
//   config.snapshot, data/{train,test}.apld, metrics.jsonl, ckpt/epoch-N.aplc,
//   analysis/{kind}-{params}.csv, manifest.json

#include <filesystem>
#include <optional>
#include <string>

#include "apl/config.hpp"
#include "apl/trainer.hpp"

namespace apl {

class CollisionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Keeps freed training buffers in the heap instead of returning them to the OS on
/// every step (glibc only; a no-op elsewhere). Call once at process start.
void tune_allocator();

/// Throws CollisionError if `path` exists and overwriting was not requested.
void guard_output(const std::filesystem::path& path, bool force);

void write_config_snapshot(const std::filesystem::path& run_dir, const ExperimentConfig& config);
ExperimentConfig read_config_snapshot(const std::filesystem::path& run_dir);

Dataset make_train_dataset(const ExperimentConfig& config);
/// Test-split samples of the trainable pairs (keys on their residue slot).
Dataset make_test_dataset(const ExperimentConfig& config, std::size_t count);

/// Highest-epoch checkpoint under run_dir/ckpt, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

/// Snapshot, train (reusing data/train.apld when present) and write the manifest.
TrainResult run_training(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                         const TrainHooks& hooks = {});

}  // namespace apl
