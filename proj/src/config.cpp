#include "apl/config.hpp"

#include <set>

#include "apl/binary_io.hpp"
#include "apl/checkpoint.hpp"

namespace apl {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(section + ": expected an object");
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError((section.empty() ? "" : section + ".") + key + ": unknown key");
    }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

}  // namespace

AnchorPair parse_pair(const std::string& text) {
    const auto comma = text.find(',');
    try {
        if (comma != std::string::npos) return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
    } catch (const std::exception&) {
    }
    throw ConfigError("bad anchor pair '" + text + "' (expected \"a,b\")");
}

PairMapping parse_pair_mapping(const std::string& text) {
    if (text == "inferential") return PairMapping::inferential();
    if (text == "held_out") return PairMapping::held_out();
    const Designation d = Designation::parse(text);
    if (d.kind != Designation::Kind::Offset) throw ConfigError("bad pair mapping '" + text + "'");
    return PairMapping::fixed_offset(d.offset);
}

MappingSpec ExperimentConfig::mapping_spec() const {
    MappingSpec spec = MappingSpec::standard();
    for (const auto& [pair, mapping] : data.mapping_overrides) spec.set(parse_pair(pair), parse_pair_mapping(mapping));
    return spec;
}

void ExperimentConfig::validate() const {
    if (data.samples == 0) throw ConfigError("data.samples must be > 0");
    if (data.seq_len != model.seq_len) throw ConfigError("data.seq_len must equal model.seq_len");
    model.validate();
    train.validate();
    if (eval.samples_per_pair == 0) throw ConfigError("eval.samples_per_pair must be > 0");
    mapping_spec();
    lr_grid(scan.lrs);
}

Budget parse_budget(const std::string& text) {
    if (text == "paper") return Budget::Paper;
    if (text == "desk") return Budget::Desk;
    throw ConfigError("--budget: expected desk or paper, got '" + text + "'");
}

void apply_budget(ExperimentConfig& c, Budget budget) {
    if (budget == Budget::Paper) return;
    c.model.d_model = 128;
    c.model.d_ff = 384;
    c.model.d_k = 64;
    c.model.d_v = 64;
    c.data.samples = 100000;
    c.train.warmup_epochs = 3;
    c.train.cosine_epochs = 57;
    c.train.total_epochs = 60;
    c.train.batch_size = 256;
}

json to_json(const ExperimentConfig& c) {
    json designations = json::array();
    for (const auto& d : c.eval.designations) designations.push_back(d.to_string());
    return json{
        {"seed", c.seed},
        {"data", {{"samples", c.data.samples}, {"seq_len", c.data.seq_len}, {"mapping_overrides", c.data.mapping_overrides}}},
        {"model", to_json(c.model)},
        {"train",
         {{"base_lr", c.train.base_lr},
          {"lr_multiplier", c.train.lr_multiplier},
          {"peak_lr", c.train.peak_lr ? json(*c.train.peak_lr) : json(nullptr)},
          {"warmup_epochs", c.train.warmup_epochs},
          {"cosine_epochs", c.train.cosine_epochs},
          {"min_lr", c.train.min_lr},
          {"total_epochs", c.train.total_epochs},
          {"weight_decay", c.train.weight_decay},
          {"decay_all", c.train.decay_all},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"adam_eps", c.train.adam_eps},
          {"batch_size", c.train.batch_size},
          {"clip_norm", c.train.clip_norm},
          {"checkpoint_every", c.train.checkpoint_every},
          {"metrics_eval_samples", c.train.metrics_eval_samples}}},
        {"eval", {{"samples_per_pair", c.eval.samples_per_pair}, {"designations", designations}}},
        {"scan",
         {{"gammas", c.scan.gammas},
          {"depths", c.scan.depths},
          {"lr_count", c.scan.lrs.count},
          {"lr_lo", c.scan.lrs.lo},
          {"lr_hi", c.scan.lrs.hi},
          {"lr_random", c.scan.lrs.random_uniform},
          {"seeds", c.scan.seeds}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    reject_unknown(j, "", {"seed", "data", "model", "train", "eval", "scan"});
    ExperimentConfig c;
    read(j, "seed", c.seed, "config");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, "data", {"samples", "seq_len", "mapping_overrides"});
        read(d, "samples", c.data.samples, "data");
        read(d, "seq_len", c.data.seq_len, "data");
        read(d, "mapping_overrides", c.data.mapping_overrides, "data");
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, "train",
                       {"base_lr", "lr_multiplier", "peak_lr", "warmup_epochs", "cosine_epochs", "min_lr",
                        "total_epochs", "weight_decay", "decay_all", "beta1", "beta2", "adam_eps", "batch_size",
                        "clip_norm", "checkpoint_every", "metrics_eval_samples"});
        read(t, "base_lr", c.train.base_lr, "train");
        read(t, "lr_multiplier", c.train.lr_multiplier, "train");
        if (t.contains("peak_lr") && !t.at("peak_lr").is_null()) {
            double v = 0;
            read(t, "peak_lr", v, "train");
            c.train.peak_lr = v;
        }
        read(t, "warmup_epochs", c.train.warmup_epochs, "train");
        read(t, "cosine_epochs", c.train.cosine_epochs, "train");
        read(t, "min_lr", c.train.min_lr, "train");
        read(t, "total_epochs", c.train.total_epochs, "train");
        read(t, "weight_decay", c.train.weight_decay, "train");
        read(t, "decay_all", c.train.decay_all, "train");
        read(t, "beta1", c.train.beta1, "train");
        read(t, "beta2", c.train.beta2, "train");
        read(t, "adam_eps", c.train.adam_eps, "train");
        read(t, "batch_size", c.train.batch_size, "train");
        read(t, "clip_norm", c.train.clip_norm, "train");
        read(t, "checkpoint_every", c.train.checkpoint_every, "train");
        read(t, "metrics_eval_samples", c.train.metrics_eval_samples, "train");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, "eval", {"samples_per_pair", "designations"});
        read(e, "samples_per_pair", c.eval.samples_per_pair, "eval");
        if (e.contains("designations")) {
            std::vector<std::string> names;
            read(e, "designations", names, "eval");
            c.eval.designations.clear();
            for (const auto& n : names) c.eval.designations.push_back(Designation::parse(n));
        }
    }
    if (j.contains("scan")) {
        const auto& s = j.at("scan");
        reject_unknown(s, "scan", {"gammas", "depths", "lr_count", "lr_lo", "lr_hi", "lr_random", "seeds"});
        read(s, "gammas", c.scan.gammas, "scan");
        read(s, "depths", c.scan.depths, "scan");
        read(s, "lr_count", c.scan.lrs.count, "scan");
        read(s, "lr_lo", c.scan.lrs.lo, "scan");
        read(s, "lr_hi", c.scan.lrs.hi, "scan");
        read(s, "lr_random", c.scan.lrs.random_uniform, "scan");
        read(s, "seeds", c.scan.seeds, "scan");
    }
    c.set_seed(c.seed);
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string text = to_json(config).dump();
    return sha256_hex(text.data(), text.size());
}

}  // namespace apl
