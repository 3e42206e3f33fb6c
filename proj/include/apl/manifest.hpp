#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace apl {

#ifndef APL_CODE_VERSION
#define APL_CODE_VERSION "0.1.0"
#endif

inline constexpr const char* kCodeVersion = APL_CODE_VERSION;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kConfigSnapshotName = "config.snapshot";

struct ArtifactRecord {
    std::string path;  // relative to the run directory, '/'-separated
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string config_hash;
    std::string code_version = kCodeVersion;
    nlohmann::json seeds = nlohmann::json::object();
    std::vector<ArtifactRecord> artifacts;
    std::vector<std::string> missing;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

/// Checksums every file under run_dir except the manifest itself. The config hash
/// and seeds come from config.snapshot; a missing snapshot is listed, not fatal.
RunManifest run_manifest(const std::filesystem::path& run_dir);

void write_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest);

struct ManifestCheck {
    std::vector<std::string> mismatched;  // checksum differs
    std::vector<std::string> missing;     // recorded but absent
    std::vector<std::string> untracked;   // present but not recorded
    bool ok() const { return mismatched.empty() && missing.empty(); }
};

/// Compares the stored manifest.json against the files currently on disk.
ManifestCheck verify_manifest(const std::filesystem::path& run_dir);

}  // namespace apl
