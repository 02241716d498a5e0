#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "madm/metrics.hpp"
#include "madm/models.hpp"
#include "madm/phantom.hpp"
#include "madm/sampler.hpp"
#include "madm/schedule.hpp"
#include "madm/train.hpp"

namespace madm {

/// Names of the built-in presets.
std::vector<std::string> preset_names();
/// Full configuration document of a preset. Throws ConfigError for unknown names.
nlohmann::json preset(const std::string& name);
/// JSON Schema every run configuration is validated against.
const nlohmann::json& run_config_schema();

struct ViewsStudy {
  std::vector<std::vector<ViewAxis>> subsets;
  std::vector<int> replicates{0};
};

struct SequentialStudy {
  std::vector<std::vector<ViewAxis>> orders;
  std::vector<int> replicates{0};
};

struct ContextStudy {
  std::vector<std::size_t> radii;
  std::vector<int> replicates{0};
};

struct TsStudy {
  int interval = 20;
  bool no_prior = true;
  std::vector<int> replicates{0};
};

/// A validated run configuration.
struct RunConfig {
  nlohmann::json doc;  // the merged, schema-validated document
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> dataset_path;
  std::uint64_t master_seed = 0;
  DatasetSpec dataset;
  NoiseSchedule schedule = NoiseSchedule::linear(200, 5e-4, 0.1);
  std::size_t context_radius = 4;
  Denoiser25DConfig denoiser;  // seed and radius are filled per network
  Prior3DConfig prior;
  int replicates = 1;
  TrainConfig denoiser_train;
  TrainConfig prior_train;
  int t_s = 40;
  ViewsStudy views_study;
  SequentialStudy sequential_study;
  ContextStudy context_study;
  TsStudy ts_study;
  std::size_t test_limit = 0;  // 0: every test volume
  std::size_t workers = 1;
  std::size_t slice_batch = 16;

  /// Validates against the schema, then checks cross-field constraints.
  /// Throws ConfigError carrying the JSON pointer of the first problem.
  static RunConfig from_json(const nlohmann::json& doc);

  /// Hash of everything that affects results (output location and execution
  /// settings excluded).
  std::string hash() const;
};

struct ConfigSources {
  std::string preset;  // empty: "desk" unless a config file is given
  std::optional<std::filesystem::path> config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
};

/// Preset (if any), then the config file as a merge patch, then overrides.
/// A config file without a preset must be a complete document.
RunConfig resolve_run_config(const ConfigSources& sources);

/// One sampler setting evaluated over the test set. A start timestep of 0 is
/// the prior estimate alone.
struct Variant {
  SamplerMode mode = SamplerMode::kAveraging;
  std::vector<ViewAxis> views{ViewAxis::kCoronal, ViewAxis::kSagittal, ViewAxis::kAxial};
  int t_s = 40;
  bool use_prior = true;
  std::size_t context_radius = 4;

  /// Stable directory and method name, e.g. "avg_coronal-sagittal-axial_ts40_s4".
  std::string key() const;
  bool prior_only() const { return use_prior && t_s == 0; }
};

inline constexpr const char* kInputMethod = "input";
inline constexpr const char* kPriorMethod = "prior";

enum class TrainTarget { kPrior, kCoronal, kSagittal, kAxial };
TrainTarget parse_train_target(std::string_view name);

/// Results of one study: evaluation rows plus the summary table.
struct StudyResult {
  std::string name;
  EvalReport report;
  std::vector<std::string> methods;  // table row order
  std::filesystem::path dir;
};

/// One row of the start-timestep sweep.
struct SweepPoint {
  int t_s = 0;
  bool use_prior = true;
  double median_nmse = 0.0;
  double mean_nmse = 0.0;
  double median_psnr = 0.0;
};

using Logger = std::function<void(const std::string&)>;

/// Artifact layout and stages of one run. Stages never retrain or rebuild
/// implicitly: a stage whose inputs are missing raises DependencyError naming
/// the missing artifact. Sample sets are cached per variant and reused when
/// their manifest matches the current configuration.
class Experiment {
 public:
  explicit Experiment(RunConfig config, Logger log = {});

  const RunConfig& config() const noexcept { return config_; }

  std::filesystem::path dataset_dir() const;
  std::filesystem::path prior_dir(int replicate) const;
  std::filesystem::path view_dir(int replicate, std::size_t context_radius, ViewAxis view) const;
  std::filesystem::path samples_dir(int replicate, const Variant& variant) const;
  std::filesystem::path eval_dir() const;
  std::filesystem::path study_dir(const std::string& study) const;

  /// Network seeds of replicate r.
  std::uint64_t init_seed(int replicate, TrainTarget target, std::size_t context_radius) const;
  std::uint64_t train_seed(int replicate, TrainTarget target, std::size_t context_radius) const;
  /// Master seed of the sampling noise of replicate r, shared by all variants.
  std::uint64_t sample_seed(int replicate) const;

  /// Builds the dataset, or verifies and reuses an identical existing one.
  Dataset cmd_dataset();
  Dataset open_dataset() const;

  /// Trains (or resumes) one network.
  TrainResult cmd_train(TrainTarget target, int replicate, std::size_t context_radius,
                        const TrainControl& control = {});
  /// Every (replicate, radius, network) that eval and the configured studies need.
  struct TrainJob {
    TrainTarget target;
    int replicate;
    std::size_t context_radius;
  };
  std::vector<TrainJob> training_plan() const;

  ViewModelSet load_models(int replicate, const Variant& variant) const;

  /// Samples the test set with one variant; returns the sample directory.
  std::filesystem::path cmd_sample(const Variant& variant, int replicate);

  /// The main comparison: input, prior and the configured averaging sampler,
  /// over every training replicate.
  EvalReport cmd_eval();

  /// study: views | sequential | context | ts
  StudyResult cmd_ablate(const std::string& study);

  /// Collects the tables produced so far into report.md.
  std::filesystem::path cmd_report();

  Variant main_variant() const;
  std::vector<std::string> provenance_lines() const;

 private:
  void log(const std::string& message) const;
  std::vector<SamplePair> test_pairs(bool normalized) const;
  void score(EvalReport& report, const std::string& method, int replicate, const std::vector<Volume>& preds,
             const std::vector<SamplePair>& raw) const;
  std::vector<Volume> load_samples(const Variant& variant, int replicate);
  StudyResult run_study(const std::string& name, const std::vector<Variant>& variants,
                        const std::vector<int>& replicates);
  void write_study(const StudyResult& result) const;

  RunConfig config_;
  Logger log_;
};

/// Sweep points of a start-timestep study, in increasing t_s with the
/// pure-noise chain last.
std::vector<SweepPoint> sweep_points(const EvalReport& report, const std::vector<Variant>& variants);
std::string sweep_csv(const std::vector<SweepPoint>& points, const std::vector<std::string>& header_comment);

/// Summary table: one row per method with medians and means of each metric.
std::string summary_table_csv(const EvalReport& report, const std::vector<std::string>& methods,
                              const std::vector<std::string>& header_comment);

}  // namespace madm
