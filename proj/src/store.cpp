#include "madm/store.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <memory>

#include "madm/error.hpp"

#ifndef MADM_VERSION_STRING
#define MADM_VERSION_STRING "madm-dev"
#endif

namespace madm {

namespace fs = std::filesystem;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: digest init failed");
    }
  }

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256: update failed");
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest.data(), &len) != 1) {
      throw Error("sha256: finalize failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string sha256_hex(std::span<const char> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span<const char>(text.data(), text.size()));
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingReference("missing file: " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string json_hash(const nlohmann::json& doc) { return sha256_hex(doc.dump()); }

std::string code_version() { return MADM_VERSION_STRING; }

Manifest write_manifest(const fs::path& dir, const std::string& kind,
                        const std::vector<std::string>& files, nlohmann::json created,
                        nlohmann::json payload) {
  Manifest m;
  m.kind = kind;
  for (const auto& rel : files) m.files[rel] = sha256_file(dir / rel);
  m.created = std::move(created);
  if (!m.created.contains("code_version")) m.created["code_version"] = code_version();
  if (!m.created.contains("timestamp")) m.created["timestamp"] = utc_timestamp();
  m.payload = std::move(payload);
  nlohmann::json doc = {{"schema_version", m.schema_version},
                        {"kind", m.kind},
                        {"files", m.files},
                        {"created", m.created},
                        {"payload", m.payload}};
  write_text(dir / kManifestName, doc.dump(2) + "\n");
  return m;
}

Manifest read_manifest_unverified(const fs::path& dir) {
  const auto path = dir / kManifestName;
  if (!fs::exists(path)) throw MissingReference("missing manifest: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kInvalid,
                      "manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  Manifest m;
  try {
    m.schema_version = doc.at("schema_version").get<int>();
    m.kind = doc.at("kind").get<std::string>();
    m.files = doc.at("files").get<std::map<std::string, std::string>>();
    m.created = doc.value("created", nlohmann::json::object());
    m.payload = doc.value("payload", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kInvalid,
                      "manifest " + path.string() + " malformed: " + e.what());
  }
  if (m.schema_version != kManifestSchemaVersion) {
    throw FormatError(FormatError::Kind::kInvalid,
                      "manifest " + path.string() + " has schema version " +
                          std::to_string(m.schema_version) + ", expected " +
                          std::to_string(kManifestSchemaVersion));
  }
  return m;
}

Manifest load_manifest(const fs::path& dir) {
  Manifest m = read_manifest_unverified(dir);
  for (const auto& [rel, expected] : m.files) {
    const auto path = dir / rel;
    if (!fs::exists(path)) throw MissingReference("manifest references missing file " + path.string());
    const auto actual = sha256_file(path);
    if (actual != expected) {
      throw CorruptArtifact("corrupt artifact: " + path.string() + " hash " + actual +
                            " does not match manifest " + expected);
    }
  }
  return m;
}

bool has_manifest(const fs::path& dir) { return fs::exists(dir / kManifestName); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace madm
