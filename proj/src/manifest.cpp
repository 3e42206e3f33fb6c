#include "apl/manifest.hpp"

#include <algorithm>
#include <map>

#include "apl/binary_io.hpp"
#include "apl/config.hpp"

namespace apl {

namespace fs = std::filesystem;
using nlohmann::json;

json RunManifest::to_json() const {
    json arts = json::array();
    for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    return json{{"config_hash", config_hash}, {"code_version", code_version}, {"seeds", seeds},
                {"artifacts", arts},          {"missing", missing}};
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.config_hash = j.value("config_hash", "");
    m.code_version = j.value("code_version", "");
    m.seeds = j.value("seeds", json::object());
    for (const auto& a : j.value("artifacts", json::array())) {
        m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                               a.at("bytes").get<std::uintmax_t>()});
    }
    m.missing = j.value("missing", std::vector<std::string>{});
    return m;
}

namespace {

std::vector<ArtifactRecord> scan_artifacts(const fs::path& run_dir) {
    std::vector<ArtifactRecord> out;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), run_dir).generic_string();
        if (rel == kManifestName) continue;
        out.push_back({rel, sha256_file(entry.path()), entry.file_size()});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return out;
}

}  // namespace

RunManifest run_manifest(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw IoError("run directory does not exist: " + run_dir.string());
    RunManifest m;
    m.artifacts = scan_artifacts(run_dir);
    const fs::path snapshot = run_dir / kConfigSnapshotName;
    if (fs::exists(snapshot)) {
        const ExperimentConfig cfg = load_experiment_config(snapshot);
        m.config_hash = config_hash(cfg);
        m.seeds = {{"root", cfg.seed},
                   {"data", cfg.data_seed()},
                   {"init", substream_seed(cfg.seed, "init")},
                   {"shuffle", substream_seed(cfg.seed, "shuffle")},
                   {"eval", cfg.eval.seed},
                   {"analysis", cfg.analysis_seed()}};
    } else {
        m.missing.push_back(kConfigSnapshotName);
    }
    const fs::path previous = run_dir / kManifestName;
    if (fs::exists(previous)) {
        const RunManifest old = RunManifest::from_json(json::parse(read_text_file(previous)));
        for (const auto& a : old.artifacts) {
            const bool present = std::any_of(m.artifacts.begin(), m.artifacts.end(),
                                             [&](const ArtifactRecord& r) { return r.path == a.path; });
            if (!present) m.missing.push_back(a.path);
        }
    }
    return m;
}

void write_manifest(const fs::path& run_dir, const RunManifest& manifest) {
    write_text_file(run_dir / kManifestName, manifest.to_json().dump(2) + "\n");
}

ManifestCheck verify_manifest(const fs::path& run_dir) {
    const RunManifest stored = RunManifest::from_json(json::parse(read_text_file(run_dir / kManifestName)));
    std::map<std::string, std::string> current;
    for (const auto& a : scan_artifacts(run_dir)) current[a.path] = a.sha256;
    ManifestCheck check;
    for (const auto& a : stored.artifacts) {
        auto it = current.find(a.path);
        if (it == current.end()) {
            check.missing.push_back(a.path);
        } else {
            if (it->second != a.sha256) check.mismatched.push_back(a.path);
            current.erase(it);
        }
    }
    for (const auto& [path, _] : current) check.untracked.push_back(path);
    return check;
}

}  // namespace apl
