#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace madm {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

std::string sha256_hex(std::span<const char> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

/// Hash of the canonical (sorted-key, compact) serialisation of a JSON document.
std::string json_hash(const nlohmann::json& doc);

/// Version string compiled into every artifact.
std::string code_version();

/// Describes one artifact directory: the files it owns, their hashes, how it
/// was created and a kind-specific payload.
struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::string kind;
  std::map<std::string, std::string> files;  // path relative to the directory -> sha256
  nlohmann::json created = nlohmann::json::object();
  nlohmann::json payload = nlohmann::json::object();
};

/// Hashes each listed file (paths relative to `dir`) and writes dir/manifest.json.
Manifest write_manifest(const std::filesystem::path& dir, const std::string& kind,
                        const std::vector<std::string>& files, nlohmann::json created,
                        nlohmann::json payload = nlohmann::json::object());

/// Parses dir/manifest.json and verifies every referenced file. Throws
/// MissingReference, CorruptArtifact or FormatError; never returns a partially
/// validated manifest.
Manifest load_manifest(const std::filesystem::path& dir);

/// Parse without touching the referenced files.
Manifest read_manifest_unverified(const std::filesystem::path& dir);

bool has_manifest(const std::filesystem::path& dir);

/// Writes text atomically enough for our purposes (write temp, rename).
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace madm
