#include <fstream>
#include <regex>

#include "torch_doctest.hpp"
#include "madm/error.hpp"
#include "madm/experiments.hpp"
#include "madm/schema.hpp"
#include "madm/store.hpp"
#include "test_util.hpp"

using namespace madm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Small enough to train every network of a run in a few seconds. The
// degradation is disabled, so inputs are exact copies of the targets.
json tiny_doc(const fs::path& out) {
  json doc = preset("desk");
  doc.merge_patch(R"({
    "dataset": {"n_train": 3, "n_test": 2, "dose_fractions": [0.05],
                "phantom": {"size": [16, 16, 16], "organ_radius_vox": [2, 4], "lesion_radius_vox": [1, 1.5],
                            "lesions": [1, 2]},
                "degrade": {"counts_gain": "inf", "attenuation_min": 1.0, "psf_fwhm_mm": 0}},
    "schedule": {"timesteps": 10, "beta_start": 0.01, "beta_end": 0.2},
    "context_radius": 1,
    "denoiser": {"base_channels": 4, "depth": 1, "embedding_dim": 8, "groups": 2},
    "prior": {"base_channels": 4, "depth": 1, "groups": 2},
    "training": {"replicates": 2,
                 "denoiser": {"steps": 6, "batch_size": 2, "checkpoint_every": 0},
                 "prior": {"steps": 4, "batch_size": 1, "crop": 8, "checkpoint_every": 0}},
    "sampling": {"t_s": 3},
    "studies": {"views": {"subsets": [["axial"]], "replicates": [0]},
                "sequential": {"replicates": [0]},
                "context": {"radii": [0, 1], "replicates": [0]},
                "ts": {"interval": 3, "no_prior": true, "replicates": [0]}}
  })"_json);
  doc["output_dir"] = out.string();
  return doc;
}

void train_everything(Experiment& ex) {
  ex.cmd_dataset();
  for (const auto& job : ex.training_plan()) ex.cmd_train(job.target, job.replicate, job.context_radius);
}

// One trained run shared by the read-only tests below.
Experiment& trained() {
  static test::TempDir dir("exp_run");
  static Experiment ex = [] {
    Experiment e(RunConfig::from_json(tiny_doc(dir.path())));
    train_everything(e);
    return e;
  }();
  return ex;
}

std::string config_error_path(const json& doc) {
  try {
    RunConfig::from_json(doc);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("shipped presets satisfy the schema and parse") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const json doc = preset(name);
    CHECK(validate_schema(run_config_schema(), doc).empty());
    const auto c = RunConfig::from_json(doc);
    CHECK(c.t_s <= c.schedule.steps());
  }
  const auto desk = RunConfig::from_json(preset("desk"));
  CHECK(desk.schedule.steps() == 200);
  CHECK(desk.dataset.phantom.size == Dims{48, 48, 48});
  CHECK(desk.context_study.radii == std::vector<std::size_t>{0, 4, 8});
  CHECK(desk.ts_study.interval == 20);
  CHECK_THROWS_AS(preset("laptop"), ConfigError);
}

TEST_CASE("invalid configurations name the offending field") {
  const json base = tiny_doc("out");
  auto with = [&](const char* patch) {
    json d = base;
    d.merge_patch(json::parse(patch));
    return d;
  };
  CHECK(config_error_path(base) == "<accepted>");
  CHECK(config_error_path(with(R"({"schedule": {"timesteps": "ten"}})")) == "/schedule/timesteps");
  CHECK(config_error_path(with(R"({"schedule": {"beta_end": 0.001}})")) == "/schedule/beta_end");
  CHECK(config_error_path(with(R"({"sampling": {"t_s": 11}})")) == "/sampling/t_s");
  CHECK(config_error_path(with(R"({"studies": {"views": {"replicates": [0, 2]}}})")) ==
        "/studies/views/replicates/1");
  CHECK(config_error_path(with(R"({"studies": {"views": {"subsets": [["axial", "axial"]]}}})")) ==
        "/studies/views/subsets/0/1");
  CHECK(config_error_path(with(R"({"studies": {"ts": {"interval": 11}}})")) == "/studies/ts/interval");
  CHECK(config_error_path(with(R"({"training": {"prior": {"crop": 17}}})")) == "/training/prior/crop");
  CHECK(config_error_path(with(R"({"dataset": {"degrade": {"counts_gain": "lots"}}})")) ==
        "/dataset/degrade/counts_gain");
  CHECK(config_error_path(with(R"({"unknown_key": 1})")) == "/unknown_key");
  json missing = base;
  missing.erase("schedule");
  CHECK(config_error_path(missing) == "/schedule");
}

TEST_CASE("config resolution layers preset, file and overrides") {
  test::TempDir dir("cfg");
  {
    std::ofstream f(dir / "patch.json");
    f << R"({"sampling": {"t_s": 20}, "master_seed": 5})";
  }
  ConfigSources src;
  src.preset = "desk";
  src.config_file = dir / "patch.json";
  auto c = resolve_run_config(src);
  CHECK(c.t_s == 20);
  CHECK(c.master_seed == 5);
  CHECK(c.schedule.steps() == 200);
  src.seed = 9;
  src.output_dir = dir / "elsewhere";
  c = resolve_run_config(src);
  CHECK(c.master_seed == 9);
  CHECK(c.output_dir == dir / "elsewhere");

  ConfigSources only_file;
  only_file.config_file = dir / "patch.json";
  CHECK_THROWS_AS(resolve_run_config(only_file), ConfigError);
  ConfigSources missing;
  missing.config_file = dir / "absent.json";
  CHECK_THROWS_AS(resolve_run_config(missing), ConfigError);
}

TEST_CASE("config hash tracks results, not locations") {
  const auto a = RunConfig::from_json(tiny_doc("a"));
  auto doc = tiny_doc("b");
  doc["execution"]["workers"] = 4;
  const auto b = RunConfig::from_json(doc);
  CHECK(a.hash() == b.hash());
  doc["master_seed"] = 1;
  CHECK(RunConfig::from_json(doc).hash() != a.hash());
  CHECK(RunConfig::from_json(doc).dataset.master_seed != a.dataset.master_seed);
}

TEST_CASE("variant keys") {
  Variant v;
  CHECK(v.key() == "avg_coronal-sagittal-axial_ts40_s4");
  v.mode = SamplerMode::kSequential;
  v.views = {ViewAxis::kAxial, ViewAxis::kCoronal, ViewAxis::kSagittal};
  CHECK(v.key() == "seq_axial-coronal-sagittal_ts40_s4");
  v = Variant{};
  v.use_prior = false;
  v.t_s = 200;
  CHECK(v.key() == "avg_coronal-sagittal-axial_noprior_s4");
  v = Variant{};
  v.t_s = 0;
  CHECK(v.key() == kPriorMethod);
}

TEST_CASE("training plan covers eval and every study") {
  const Experiment ex(RunConfig::from_json(tiny_doc("plan")));
  const auto plan = ex.training_plan();
  // 2 replicates x (prior + 3 views at s=1), plus 3 views at s=0 for replicate 0.
  CHECK(plan.size() == 11);
  std::size_t s0 = 0;
  for (const auto& j : plan) s0 += j.target != TrainTarget::kPrior && j.context_radius == 0;
  CHECK(s0 == 3);
  CHECK(ex.init_seed(0, TrainTarget::kAxial, 1) != ex.init_seed(1, TrainTarget::kAxial, 1));
  CHECK(ex.init_seed(0, TrainTarget::kAxial, 1) != ex.init_seed(0, TrainTarget::kAxial, 0));
  CHECK(ex.init_seed(0, TrainTarget::kAxial, 1) != ex.train_seed(0, TrainTarget::kAxial, 1));
}

TEST_CASE("stages refuse to run without their prerequisites") {
  test::TempDir dir("deps");
  Experiment ex(RunConfig::from_json(tiny_doc(dir.path())));
  try {
    ex.cmd_sample(ex.main_variant(), 0);
    FAIL("expected a dependency error");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("dataset") != std::string::npos);
  }
  CHECK_THROWS_AS(ex.cmd_train(TrainTarget::kPrior, 0, 0), DependencyError);
  ex.cmd_dataset();
  try {
    ex.cmd_sample(ex.main_variant(), 0);
    FAIL("expected a dependency error");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find(ex.prior_dir(0).string()) != std::string::npos);
  }
  ex.cmd_train(TrainTarget::kPrior, 0, 0);
  try {
    ex.cmd_sample(ex.main_variant(), 0);
    FAIL("expected a dependency error");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("coronal") != std::string::npos);
  }
  CHECK_THROWS_AS(ex.cmd_report(), DependencyError);
  CHECK_THROWS_AS(ex.cmd_train(TrainTarget::kPrior, 2, 0), ConfigError);
}

TEST_CASE("a changed dataset specification is not silently reused") {
  test::TempDir dir("ds_reuse");
  Experiment a(RunConfig::from_json(tiny_doc(dir.path())));
  a.cmd_dataset();
  const auto before = sha256_file(a.dataset_dir() / kManifestName);
  a.cmd_dataset();
  CHECK(sha256_file(a.dataset_dir() / kManifestName) == before);
  auto doc = tiny_doc(dir.path());
  doc["dataset"]["n_test"] = 3;
  Experiment b(RunConfig::from_json(doc));
  CHECK_THROWS_AS(b.cmd_dataset(), ConfigError);
  CHECK_THROWS_AS(b.open_dataset(), ConfigError);
}

TEST_CASE("evaluating predictions equal to the targets reports the identity sentinel") {
  auto& ex = trained();
  const auto report = ex.cmd_eval();
  const auto rows = report.column(kInputMethod, &VolumeRow::psnr_db);
  REQUIRE(rows.size() == 2);
  for (double p : rows) CHECK(std::isinf(p));
  for (double r : report.column(kInputMethod, &VolumeRow::rmse)) CHECK(r == 0.0);
  const auto csv = read_text(ex.eval_dir() / "volume_metrics.csv");
  CHECK(std::regex_search(csv, std::regex(",input,0,identical,[^,]*,0,0,")));
  CHECK(report.column(kPriorMethod, &VolumeRow::psnr_db).size() == 4);  // 2 volumes x 2 replicates
  CHECK(report.column(ex.main_variant().key(), &VolumeRow::psnr_db).size() == 4);
}

TEST_CASE("every output embeds config hash, master seed and code version") {
  auto& ex = trained();
  ex.cmd_eval();
  ex.cmd_ablate("ts");
  const auto& c = ex.config();
  for (const auto& f : {ex.eval_dir() / "volume_metrics.csv", ex.eval_dir() / "lesion_metrics.csv",
                        ex.eval_dir() / "table.csv", ex.study_dir("ts") / "sweep.csv",
                        ex.study_dir("ts") / "sweep.svg"}) {
    CAPTURE(f);
    const auto text = read_text(f);
    CHECK(text.find("config_hash: " + c.hash()) != std::string::npos);
    CHECK(text.find("master_seed: " + std::to_string(c.master_seed)) != std::string::npos);
    CHECK(text.find("code_version: " + code_version()) != std::string::npos);
  }
  const auto report = read_text(ex.cmd_report());
  CHECK(report.find(c.hash()) != std::string::npos);
  CHECK(report.find("sweep.svg") != std::string::npos);
}

TEST_CASE("a one-view subset study yields a one-row table") {
  auto& ex = trained();
  const auto result = ex.cmd_ablate("views");
  CHECK(result.methods == std::vector<std::string>{"avg_axial_ts3_s1"});
  CHECK(data_lines(read_text(result.dir / "table.csv")).size() == 1);
}

TEST_CASE("sequential study compares every order with averaging") {
  auto& ex = trained();
  const auto result = ex.cmd_ablate("sequential");
  REQUIRE(result.methods.size() == 4);
  CHECK(result.methods.back() == ex.main_variant().key());
  CHECK(data_lines(read_text(result.dir / "table.csv")).size() == 4);
}

TEST_CASE("context study uses the per-radius networks") {
  auto& ex = trained();
  const auto result = ex.cmd_ablate("context");
  CHECK(result.methods == std::vector<std::string>{"avg_coronal-sagittal-axial_ts3_s0",
                                                   "avg_coronal-sagittal-axial_ts3_s1"});
}

TEST_CASE("start-timestep sweep has floor(T / interval) + 1 prior points plus the pure-noise chain") {
  auto& ex = trained();
  const auto result = ex.cmd_ablate("ts");
  const auto sweep = data_lines(read_text(result.dir / "sweep.csv"));
  // T = 10, interval 3: t_s in {0, 3, 6, 9}.
  REQUIRE(sweep.size() == 5);
  CHECK(sweep[0].rfind("0,true,", 0) == 0);
  CHECK(sweep[3].rfind("9,true,", 0) == 0);
  CHECK(sweep[4].rfind("10,false,", 0) == 0);
  const auto svg = read_text(result.dir / "sweep.svg");
  std::size_t circles = 0;
  for (auto p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
  CHECK(circles == 5);
  CHECK(result.methods.front() == kPriorMethod);
}

TEST_CASE("sample sets are cached and verified") {
  auto& ex = trained();
  const auto v = ex.main_variant();
  const auto dir = ex.cmd_sample(v, 0);
  const auto stamp = fs::last_write_time(dir / kManifestName);
  CHECK(ex.cmd_sample(v, 0) == dir);
  CHECK(fs::last_write_time(dir / kManifestName) == stamp);
  const auto first = read_volume(dir / "000.madmvol");
  {
    std::ofstream f(dir / "000.madmvol", std::ios::binary | std::ios::app);
    f << "x";
  }
  CHECK_THROWS_AS(ex.cmd_sample(v, 0), CorruptArtifact);
  fs::remove_all(dir);
  ex.cmd_sample(v, 0);
  CHECK(test::bit_equal(read_volume(dir / "000.madmvol"), first));
}

TEST_CASE("checkpoints from a different training configuration are rejected") {
  auto& ex = trained();
  auto doc = ex.config().doc;
  doc["training"]["denoiser"]["lr0"] = 0.5;
  Experiment other(RunConfig::from_json(doc));
  CHECK_THROWS_AS(other.cmd_sample(other.main_variant(), 0), ConfigError);
  CHECK_THROWS_AS(other.cmd_train(TrainTarget::kAxial, 0, 1), ConfigError);
}

TEST_CASE("identical runs write byte-identical metric files") {
  test::TempDir a("rerun_a"), b("rerun_b");
  std::vector<std::string> files;
  for (const auto* dir : {&a, &b}) {
    auto doc = tiny_doc(dir->path());
    doc["training"]["replicates"] = 1;
    doc["studies"]["context"]["radii"] = json::array({1});
    Experiment ex(RunConfig::from_json(doc));
    train_everything(ex);
    ex.cmd_eval();
    ex.cmd_ablate("sequential");
    std::string all;
    for (const auto& f : {ex.eval_dir() / "volume_metrics.csv", ex.eval_dir() / "lesion_metrics.csv",
                          ex.eval_dir() / "table.csv", ex.study_dir("sequential") / "volume_metrics.csv"}) {
      all += read_text(f);
    }
    files.push_back(all);
  }
  CHECK(files[0] == files[1]);
}

TEST_CASE("summary table formats medians per method") {
  EvalReport r;
  VolumeRow row;
  row.method = "m";
  for (double p : {10.0, 30.0, 20.0}) {
    row.psnr_db = p;
    row.nmse = p / 100.0;
    r.add_row(row);
  }
  r.add_lesion_row({"a", "m", 0, 0, 0.5});
  const auto lines = data_lines(summary_table_csv(r, {"m"}, {}));
  REQUIRE(lines.size() == 1);
  CHECK(lines[0].rfind("m,3,20.000000,20.000000,10.0000,", 0) == 0);
  CHECK(lines[0].find(",0.5,0.5") != std::string::npos);
}
