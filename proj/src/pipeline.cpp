#include "apl/pipeline.hpp"

#include <regex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "apl/binary_io.hpp"
#include "apl/manifest.hpp"

namespace apl {

namespace fs = std::filesystem;

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

void guard_output(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw CollisionError(path.string() + " already exists (use --force to overwrite)");
    }
}

void write_config_snapshot(const fs::path& run_dir, const ExperimentConfig& config) {
    fs::create_directories(run_dir);
    write_text_file(run_dir / kConfigSnapshotName, to_json(config).dump(2) + "\n");
}

ExperimentConfig read_config_snapshot(const fs::path& run_dir) {
    return load_experiment_config(run_dir / kConfigSnapshotName);
}

Dataset make_train_dataset(const ExperimentConfig& config) {
    return build_dataset({config.data.samples, config.data.seq_len, config.data_seed(), Split::Train},
                         config.mapping_spec());
}

Dataset make_test_dataset(const ExperimentConfig& config, std::size_t count) {
    return build_dataset({count, config.data.seq_len, config.data_seed(), Split::Test}, config.mapping_spec());
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
    const fs::path dir = run_dir / "ckpt";
    if (!fs::is_directory(dir)) return std::nullopt;
    static const std::regex pattern(R"(epoch-(\d+)\.aplc)");
    std::optional<fs::path> best;
    long best_epoch = -1;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (!std::regex_match(name, m, pattern)) continue;
        const long epoch = std::stol(m[1].str());
        if (epoch > best_epoch) {
            best_epoch = epoch;
            best = entry.path();
        }
    }
    return best;
}

TrainResult run_training(const ExperimentConfig& config, const fs::path& run_dir, const TrainHooks& hooks) {
    config.validate();
    fs::create_directories(run_dir);
    write_config_snapshot(run_dir, config);
    const fs::path data_path = run_dir / "data" / "train.apld";
    Dataset dataset;
    if (fs::exists(data_path)) {
        dataset = load_dataset(data_path, config.mapping_spec(), Split::Train);
        if (dataset.samples.size() != config.data.samples || dataset.seed != config.data_seed()) {
            throw ConfigError("data/train.apld was generated with a different data config");
        }
    } else {
        dataset = make_train_dataset(config);
    }
    TrainResult result = train(config.model, config.train, dataset, run_dir, hooks);
    write_manifest(run_dir, run_manifest(run_dir));
    return result;
}

}  // namespace apl
