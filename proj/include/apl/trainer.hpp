#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "apl/datagen.hpp"
#include "apl/eval_phase.hpp"
#include "apl/transformer.hpp"

namespace apl {

struct TrainConfig {
    double base_lr = 1e-5;
    double lr_multiplier = 25.0;
    /// Overrides base_lr * lr_multiplier as the warmup target when set.
    std::optional<double> peak_lr;
    int warmup_epochs = 10;
    int cosine_epochs = 200;
    double min_lr = 1e-5;
    int total_epochs = 210;
    double weight_decay = 0.01;
    /// Decay biases and LN parameters too, not only weight matrices.
    bool decay_all = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 2048;
    double clip_norm = 1.0;
    /// 0 writes only the final checkpoint.
    int checkpoint_every = 0;
    std::uint64_t seed = 0;
    /// Per-pair sample count for the per-epoch accuracy columns; 0 disables them.
    std::size_t metrics_eval_samples = 200;

    void validate() const;
    double peak() const { return peak_lr ? *peak_lr : base_lr * lr_multiplier; }
};

/// Linear ramp base -> peak over warmup, then cosine peak -> min_lr over cosine_epochs.
double lr_at(double epoch, const TrainConfig& config);

/// Scales every gradient by max_norm/g when the global L2 norm g exceeds max_norm. Returns g.
template <typename T>
double clip_global_norm(std::span<Parameter<T>> params, double max_norm);

template <typename T>
double global_grad_norm(std::span<const Parameter<T>> params);

template <typename T>
struct OptimState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t t = 0;

    static OptimState zeros_like(std::span<const Parameter<T>> params);
};

/// One AdamW update with bias correction and decoupled decay p <- p - lr*wd*p.
template <typename T>
void adamw_step(std::span<Parameter<T>> params, OptimState<T>& state, double lr, const TrainConfig& config);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double seen_test_acc = 0.0;
    double unseen_inferential_acc = 0.0;
    double unseen_symmetric_acc = 0.0;
    double wall_seconds = 0.0;
    bool operator==(const EpochMetrics&) const = default;
};

nlohmann::json to_json(const EpochMetrics& m);
EpochMetrics epoch_metrics_from_json(const nlohmann::json& j);
std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    TransformerParams<float> params;
    std::vector<EpochMetrics> metrics;
    std::filesystem::path final_checkpoint;
};

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
};

/// Epoch loop: seeded shuffle, batches, loss_and_grads -> clip -> adamw_step at lr_at(epoch).
/// With a non-empty out_dir, writes metrics.jsonl and ckpt/epoch-{N}.aplc.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& dataset,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

std::string checkpoint_name(int epoch);

}  // namespace apl
