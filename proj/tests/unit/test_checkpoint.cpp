#include <doctest.h>

#include <filesystem>

#include "apl/binary_io.hpp"
#include "apl/checkpoint.hpp"

using namespace apl;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "apl_unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

ModelConfig tiny() {
    ModelConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.d_k = 4;
    c.d_v = 4;
    c.gamma = 0.7;
    c.activation = Activation::Relu;
    return c;
}

}  // namespace

TEST_CASE("checkpoint round trip keeps every tensor and the metadata") {
    Rng rng(1);
    const auto params = init_params<float>(tiny(), rng);
    CheckpointMeta meta{tiny(), 1234, 7, {{"note", "x"}}};
    const auto path = temp_path("t.aplc");
    save_checkpoint(path, params, meta);

    const auto back = load_checkpoint<float>(path);
    CHECK(back.meta.model == tiny());
    CHECK(back.meta.step == 1234);
    CHECK(back.meta.epoch == 7);
    CHECK(back.meta.extra["note"] == "x");
    for (std::size_t i = 0; i < params.all().size(); ++i) {
        CHECK(back.params[i].name == params[i].name);
        CHECK(back.params[i].value == params[i].value);
    }

    // stored as f32, widened on load
    const auto wide = load_checkpoint<double>(path);
    CHECK(wide.params.at("decoder.W").value[3] == static_cast<double>(params.at("decoder.W").value[3]));

    // predictions survive the trip
    std::vector<Token> tokens{20, 33, 1, 2, 40, 41, 42, 43, 44};
    CHECK(forward(back.params, tokens) == forward(params, tokens));
}

TEST_CASE("double checkpoints round trip exactly") {
    Rng rng(2);
    const auto params = init_params<double>(tiny(), rng);
    const auto path = temp_path("d.aplc");
    save_checkpoint(path, params, {tiny(), 0, 0, {}});
    const auto back = load_checkpoint<double>(path);
    CHECK(back.params.at("layer.1.WV").value == params.at("layer.1.WV").value);
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
    Rng rng(3);
    const auto params = init_params<float>(tiny(), rng);
    const auto path = temp_path("c.aplc");
    save_checkpoint(path, params, {tiny(), 0, 0, {}});
    auto bytes = read_file_bytes(path);

    auto write = [&](std::vector<char> b) { write_text_file(path, std::string(b.begin(), b.end())); };
    auto bad_magic = bytes;
    bad_magic[1] = 'Z';
    write(bad_magic);
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    write(truncated);
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);

    CHECK_THROWS_AS(load_checkpoint<float>(temp_path("nope.aplc")), IoError);
}

TEST_CASE("model config json rejects unknown keys") {
    auto j = to_json(tiny());
    CHECK(model_config_from_json(j) == tiny());
    j["heads"] = 4;
    CHECK_THROWS_WITH_AS(model_config_from_json(j), doctest::Contains("model.heads"), ConfigError);
}
