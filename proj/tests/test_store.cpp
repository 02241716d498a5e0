#include <fstream>

#include "doctest.h"
#include "madm/error.hpp"
#include "madm/store.hpp"
#include "test_util.hpp"

using namespace madm;

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex(std::string()) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("json hash ignores key insertion order") {
  nlohmann::json a = {{"x", 1}, {"y", {1, 2}}};
  nlohmann::json b;
  b["y"] = {1, 2};
  b["x"] = 1;
  CHECK(json_hash(a) == json_hash(b));
  b["x"] = 2;
  CHECK(json_hash(a) != json_hash(b));
}

TEST_CASE("manifest round trip and verification failures") {
  test::TempDir dir("store");
  write_text(dir / "a.txt", "alpha");
  write_text(dir / "sub/b.txt", "beta");
  const auto written =
      write_manifest(dir.path(), "demo", {"a.txt", "sub/b.txt"}, {{"seed", 3}}, {{"k", "v"}});
  CHECK(has_manifest(dir.path()));
  const auto loaded = load_manifest(dir.path());
  CHECK(loaded.kind == "demo");
  CHECK(loaded.files == written.files);
  CHECK(loaded.created["seed"] == 3);
  CHECK(loaded.created.contains("code_version"));
  CHECK(loaded.payload["k"] == "v");

  SUBCASE("tampered payload") {
    write_text(dir / "a.txt", "alphA");
    try {
      load_manifest(dir.path());
      FAIL("expected CorruptArtifact");
    } catch (const CorruptArtifact& e) {
      CHECK(std::string(e.what()).find("a.txt") != std::string::npos);
    }
  }
  SUBCASE("missing file") {
    std::filesystem::remove(dir / "sub/b.txt");
    CHECK_THROWS_AS(load_manifest(dir.path()), MissingReference);
  }
  SUBCASE("schema version") {
    auto doc = nlohmann::json::parse(read_text(dir / "manifest.json"));
    doc["schema_version"] = 99;
    write_text(dir / "manifest.json", doc.dump());
    CHECK_THROWS_AS(load_manifest(dir.path()), FormatError);
  }
  SUBCASE("no manifest") {
    std::filesystem::remove(dir / "manifest.json");
    CHECK_THROWS_AS(load_manifest(dir.path()), MissingReference);
  }
}
