#include "apl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "apl/binary_io.hpp"
#include "apl/checkpoint.hpp"

namespace apl {

using nlohmann::json;

void TrainConfig::validate() const {
    if (warmup_epochs < 0 || cosine_epochs < 1) throw ConfigError("train: warmup_epochs >= 0 and cosine_epochs >= 1 required");
    if (warmup_epochs + cosine_epochs != total_epochs) {
        throw ConfigError("train.total_epochs must equal warmup_epochs + cosine_epochs");
    }
    for (double lr : {base_lr, min_lr, peak()}) {
        if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train: learning rates must be finite and > 0");
    }
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
    if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be > 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
}

double lr_at(double epoch, const TrainConfig& c) {
    const double peak = c.peak();
    if (epoch < c.warmup_epochs) {
        return c.base_lr + (peak - c.base_lr) * epoch / c.warmup_epochs;
    }
    const double progress = std::clamp((epoch - c.warmup_epochs) / c.cosine_epochs, 0.0, 1.0);
    // endpoints exactly, not through cos rounding
    if (progress == 0.0) return peak;
    if (progress == 1.0) return c.min_lr;
    return c.min_lr + (peak - c.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double global_grad_norm(std::span<const Parameter<T>> params) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (T g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

template <typename T>
double clip_global_norm(std::span<Parameter<T>> params, double max_norm) {
    const double norm = global_grad_norm<T>(params);
    if (norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& p : params) p.grad.mat() *= scale;
    }
    return norm;
}

template <typename T>
OptimState<T> OptimState<T>::zeros_like(std::span<const Parameter<T>> params) {
    OptimState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.value.shape);
        s.v.emplace_back(p.value.shape);
    }
    return s;
}

template <typename T>
void adamw_step(std::span<Parameter<T>> params, OptimState<T>& state, double lr, const TrainConfig& c) {
    if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match parameters");
    ++state.t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T step = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(c.adam_eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (c.weight_decay > 0 && (p.is_matrix() || c.decay_all)) {
            p.value.mat() *= static_cast<T>(1.0 - lr * c.weight_decay);
        }
        auto m = state.m[i].mat().array();
        auto v = state.v[i].mat().array();
        const auto g = p.grad.mat().array();
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g.square();
        p.value.mat().array() -= step * m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
}

json to_json(const EpochMetrics& m) {
    return json{{"epoch", m.epoch},
                {"lr", m.lr},
                {"train_loss", m.train_loss},
                {"seen_test_acc", m.seen_test_acc},
                {"unseen_inferential_acc", m.unseen_inferential_acc},
                {"unseen_symmetric_acc", m.unseen_symmetric_acc},
                {"wall_seconds", m.wall_seconds}};
}

EpochMetrics epoch_metrics_from_json(const json& j) {
    EpochMetrics m;
    m.epoch = j.at("epoch").get<int>();
    m.lr = j.at("lr").get<double>();
    m.train_loss = j.at("train_loss").get<double>();
    m.seen_test_acc = j.at("seen_test_acc").get<double>();
    m.unseen_inferential_acc = j.at("unseen_inferential_acc").get<double>();
    m.unseen_symmetric_acc = j.at("unseen_symmetric_acc").get<double>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    return m;
}

std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics log " + path.string());
    std::vector<EpochMetrics> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(epoch_metrics_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw IoError(path.string() + ": bad metrics record: " + e.what());
        }
    }
    return out;
}

std::string checkpoint_name(int epoch) { return "epoch-" + std::to_string(epoch) + ".aplc"; }

TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& dataset,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks) {
    config.validate();
    model.validate();
    if (dataset.split != Split::Train) throw ConfigError("train: dataset must be a training split");
    if (dataset.samples.empty()) throw ConfigError("train: dataset is empty");
    if (dataset.seq_len != model.seq_len) throw ConfigError("train: dataset seq_len differs from model.seq_len");

    Rng init_rng = make_rng(config.seed, "init");
    TrainResult result{init_params<float>(model, init_rng), {}, {}};
    auto& params = result.params;
    std::span<Parameter<float>> plist(params.all());
    auto state = OptimState<float>::zeros_like(plist);

    std::ofstream metrics_log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir / "ckpt");
        metrics_log.open(out_dir / "metrics.jsonl", std::ios::trunc);
        if (!metrics_log) throw IoError("cannot write " + (out_dir / "metrics.jsonl").string());
    }

    EvalConfig eval_cfg;
    eval_cfg.samples_per_pair = config.metrics_eval_samples;
    eval_cfg.seed = substream_seed(config.seed, "eval");

    std::vector<std::size_t> order(dataset.samples.size());
    std::vector<Sample> batch;
    const auto start = std::chrono::steady_clock::now();
    std::uint64_t step = 0;
    auto save = [&](int epoch) {
        if (out_dir.empty()) return;
        CheckpointMeta meta{model, step, epoch, json{{"train_seed", config.seed}, {"peak_lr", config.peak()}}};
        result.final_checkpoint = out_dir / "ckpt" / checkpoint_name(epoch);
        save_checkpoint(result.final_checkpoint, params, meta);
    };

    for (int epoch = 0; epoch < config.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng{indexed_seed(substream_seed(config.seed, "shuffle"), static_cast<std::uint64_t>(epoch))};
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
            batch.clear();
            for (std::size_t i = b0; i < b1; ++i) batch.push_back(dataset.samples[order[i]]);
            const float loss = loss_and_grads(params, std::span<const Sample>(batch));
            if (!std::isfinite(loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                    std::to_string(n_batches) + " (lr " + std::to_string(lr) + ")");
            }
            clip_global_norm(plist, config.clip_norm);
            adamw_step(plist, state, lr, config);
            loss_sum += loss;
            ++n_batches;
            ++step;
        }

        EpochMetrics m;
        m.epoch = epoch + 1;
        m.lr = lr;
        m.train_loss = loss_sum / static_cast<double>(n_batches);
        if (config.metrics_eval_samples > 0) {
            const auto report = generalization_report(params, dataset.spec, eval_cfg);
            m.seen_test_acc = report.seen_accuracy();
            m.unseen_inferential_acc = report.held_out_accuracy(Designation::inferential()).value_or(0.0);
            m.unseen_symmetric_acc = report.held_out_accuracy(Designation::symmetric()).value_or(0.0);
        }
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.metrics.push_back(m);
        if (metrics_log.is_open()) {
            metrics_log << to_json(m).dump() << '\n';
            metrics_log.flush();
        }
        if (hooks.on_epoch) hooks.on_epoch(m);
        if (config.checkpoint_every > 0 && m.epoch % config.checkpoint_every == 0 && m.epoch != config.total_epochs) {
            save(m.epoch);
        }
    }
    save(config.total_epochs);
    return result;
}

template double global_grad_norm<float>(std::span<const Parameter<float>>);
template double global_grad_norm<double>(std::span<const Parameter<double>>);
template double clip_global_norm<float>(std::span<Parameter<float>>, double);
template double clip_global_norm<double>(std::span<Parameter<double>>, double);
template struct OptimState<float>;
template struct OptimState<double>;
template void adamw_step<float>(std::span<Parameter<float>>, OptimState<float>&, double, const TrainConfig&);
template void adamw_step<double>(std::span<Parameter<double>>, OptimState<double>&, double, const TrainConfig&);

}  // namespace apl
