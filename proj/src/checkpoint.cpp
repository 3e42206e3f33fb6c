#include "apl/checkpoint.hpp"

#include <fstream>
#include <set>

#include "apl/binary_io.hpp"

namespace apl {

using nlohmann::json;

json to_json(const ModelConfig& c) {
    return json{{"depth", c.depth},       {"d_model", c.d_model}, {"d_ff", c.d_ff},
                {"d_k", c.d_k},           {"d_v", c.d_v},         {"vocab", c.vocab},
                {"seq_len", c.seq_len},   {"gamma", c.gamma},     {"activation", to_string(c.activation)},
                {"gamma_init_all", c.gamma_init_all}};
}

ModelConfig model_config_from_json(const json& j) {
    static const std::set<std::string> known{"depth", "d_model", "d_ff", "d_k", "d_v", "vocab",
                                             "seq_len", "gamma", "activation", "gamma_init_all"};
    if (!j.is_object()) throw ConfigError("model: expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("model." + key + ": unknown key");
    }
    ModelConfig c;
    auto field = [&](const char* key, auto& out) {
        if (!j.contains(key)) return;
        try {
            out = j.at(key).get<std::decay_t<decltype(out)>>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("model.") + key + ": " + e.what());
        }
    };
    field("depth", c.depth);
    field("d_model", c.d_model);
    field("d_ff", c.d_ff);
    field("d_k", c.d_k);
    field("d_v", c.d_v);
    field("vocab", c.vocab);
    field("seq_len", c.seq_len);
    field("gamma", c.gamma);
    field("gamma_init_all", c.gamma_init_all);
    std::string activation = to_string(c.activation);
    field("activation", activation);
    c.activation = parse_activation(activation);
    return c;
}

namespace {
constexpr char kMagic[4] = {'A', 'P', 'L', 'C'};
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kF64 = 1;
}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerParams<T>& params, const CheckpointMeta& meta) {
    json m{{"model", to_json(meta.model)}, {"step", meta.step}, {"epoch", meta.epoch}, {"extra", meta.extra}};
    const std::string text = m.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    le::put<std::uint32_t>(out, kCheckpointVersion);
    le::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params.all()) {
        le::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        le::put<std::uint8_t>(out, std::is_same_v<T, float> ? kF32 : kF64);
        le::put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
        for (auto d : p.value.shape) le::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (T v : p.value.data) {
            if constexpr (std::is_same_v<T, float>) {
                le::put_f32(out, v);
            } else {
                le::put_f64(out, v);
            }
        }
    }
    if (!out) throw IoError("write failed for checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    try {
        char magic[4];
        if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw IoError("bad magic");
        const auto version = le::get<std::uint32_t>(in);
        if (version != kCheckpointVersion) throw IoError("unsupported version " + std::to_string(version));
        const auto meta_len = le::get<std::uint32_t>(in);
        std::string text(meta_len, '\0');
        if (!in.read(text.data(), meta_len)) throw IoError("truncated metadata");
        json m = json::parse(text);
        CheckpointMeta meta;
        meta.model = model_config_from_json(m.at("model"));
        meta.step = m.value("step", std::uint64_t{0});
        meta.epoch = m.value("epoch", 0);
        meta.extra = m.value("extra", json::object());

        TransformerParams<T> params(meta.model);
        std::set<std::string> seen;
        while (in.peek() != std::char_traits<char>::eof()) {
            const auto name_len = le::get<std::uint16_t>(in);
            std::string name(name_len, '\0');
            if (!in.read(name.data(), name_len)) throw IoError("truncated tensor name");
            const auto dtype = le::get<std::uint8_t>(in);
            const auto rank = le::get<std::uint8_t>(in);
            std::vector<std::size_t> dims(rank);
            for (auto& d : dims) d = le::get<std::uint32_t>(in);
            if (!params.contains(name)) throw IoError("unexpected tensor " + name);
            auto& p = params.at(name);
            if (p.value.shape != dims) throw IoError("shape mismatch for " + name);
            for (auto& v : p.value.data) {
                if (dtype == kF32) {
                    v = static_cast<T>(le::get_f32(in));
                } else if (dtype == kF64) {
                    v = static_cast<T>(le::get_f64(in));
                } else {
                    throw IoError("unknown dtype for " + name);
                }
            }
            seen.insert(name);
        }
        if (seen.size() != params.all().size()) throw IoError("checkpoint is missing tensors");
        return {std::move(meta), std::move(params)};
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": bad metadata: " + e.what());
    }
}

template void save_checkpoint<float>(const std::filesystem::path&, const TransformerParams<float>&, const CheckpointMeta&);
template void save_checkpoint<double>(const std::filesystem::path&, const TransformerParams<double>&, const CheckpointMeta&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace apl
