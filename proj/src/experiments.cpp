#include "madm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <tuple>

#include "madm/embedded_configs.hpp"
#include "madm/error.hpp"
#include "madm/parallel.hpp"
#include "madm/plot.hpp"
#include "madm/rng.hpp"
#include "madm/schema.hpp"
#include "madm/store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace madm {

namespace {

constexpr std::uint64_t kDatasetKey = 0x64617461ULL;  // "data"
constexpr std::uint64_t kInitKey = 0x696e6974ULL;     // "init"
constexpr std::uint64_t kTrainKey = 0x74726e73ULL;    // "trns"
constexpr std::uint64_t kSampleKey = 0x736d706cULL;   // "smpl"

std::vector<ViewAxis> parse_views(const json& a) {
  std::vector<ViewAxis> out;
  for (const auto& v : a) out.push_back(parse_view_axis(v.get<std::string>()));
  return out;
}

std::string join_views(const std::vector<ViewAxis>& views, const char* sep) {
  std::string out;
  for (auto v : views) {
    if (!out.empty()) out += sep;
    out += to_string(v);
  }
  return out;
}

std::vector<int> parse_replicates(const json& study, int available, const std::string& pointer) {
  std::vector<int> out{0};
  if (study.contains("replicates")) out = study.at("replicates").get<std::vector<int>>();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] >= available) {
      throw ConfigError(pointer + "/replicates/" + std::to_string(i),
                        "replicate " + std::to_string(out[i]) + " is not trained (training.replicates = " +
                            std::to_string(available) + ")");
    }
  }
  return out;
}

template <typename F>
auto as_config_error(const std::string& pointer, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(pointer, e.what());
  } catch (const json::exception& e) {
    throw ConfigError(pointer, e.what());
  }
}

std::string fmt(double v, const char* spec = "%.6f") {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string volume_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu.madmvol", i);
  return buf;
}

std::string replicate_dir(int r) { return "r" + std::to_string(r); }

ViewAxis target_view(TrainTarget t) {
  switch (t) {
    case TrainTarget::kCoronal: return ViewAxis::kCoronal;
    case TrainTarget::kSagittal: return ViewAxis::kSagittal;
    case TrainTarget::kAxial: return ViewAxis::kAxial;
    case TrainTarget::kPrior: break;
  }
  throw RangeError("the prior has no view axis");
}

TrainTarget view_target(ViewAxis v) {
  switch (v) {
    case ViewAxis::kCoronal: return TrainTarget::kCoronal;
    case ViewAxis::kSagittal: return TrainTarget::kSagittal;
    case ViewAxis::kAxial: return TrainTarget::kAxial;
  }
  return TrainTarget::kPrior;
}

std::string target_name(TrainTarget t) {
  return t == TrainTarget::kPrior ? "prior" : std::string(to_string(target_view(t)));
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(FormatError::Kind::kInvalid, path.string() + ": " + e.what());
  }
}

// Training settings recorded in a checkpoint must match the run's.
void check_checkpoint_config(const fs::path& dir, const json& model, const json& train, const json* schedule) {
  const json cfg = read_json_file(dir / kCheckpointConfig);
  const bool same = cfg.at("model") == model && cfg.at("train") == train &&
                    (!schedule || cfg.at("schedule") == *schedule);
  if (!same) {
    throw ConfigError(dir.string(), "checkpoint was trained with a different configuration; move it away to retrain");
  }
}

std::string ema_hash(const fs::path& dir) {
  const auto m = read_manifest_unverified(dir);
  auto it = m.files.find(kEmaFile);
  if (it == m.files.end()) throw MissingReference(dir.string() + ": manifest lists no " + kEmaFile);
  return it->second;
}

}  // namespace

std::vector<std::string> preset_names() { return {"desk", "paper-scale"}; }

json preset(const std::string& name) {
  if (name == "desk") return json::parse(embedded::kDeskPreset);
  if (name == "paper-scale") return json::parse(embedded::kPaperScalePreset);
  throw ConfigError("--preset", "unknown preset '" + name + "' (expected desk or paper-scale)");
}

const json& run_config_schema() {
  static const json schema = json::parse(embedded::kRunConfigSchema);
  return schema;
}

RunConfig RunConfig::from_json(const json& doc) {
  const auto issues = validate_schema(run_config_schema(), doc);
  if (!issues.empty()) {
    throw ConfigError(issues.front().pointer.empty() ? "/" : issues.front().pointer, issues.front().message);
  }
  RunConfig c;
  c.doc = doc;
  c.output_dir = doc.at("output_dir").get<std::string>();
  if (doc.contains("dataset_path")) c.dataset_path = fs::path(doc.at("dataset_path").get<std::string>());
  c.master_seed = doc.at("master_seed").get<std::uint64_t>();

  const auto& exec = doc.at("execution");
  c.workers = exec.value("workers", c.workers);
  c.slice_batch = exec.value("slice_batch", c.slice_batch);

  const auto& ds = doc.at("dataset");
  if (ds.contains("degrade") && ds.at("degrade").contains("counts_gain")) {
    const auto& g = ds.at("degrade").at("counts_gain");
    if (g.is_string() && g.get<std::string>() != "inf") {
      throw ConfigError("/dataset/degrade/counts_gain", "must be a number or \"inf\"");
    }
  }
  c.dataset = as_config_error("/dataset", [&] { return DatasetSpec::from_json(ds); });
  if (ds.contains("phantom") && ds.at("phantom").contains("voxel_mm") &&
      !(ds.contains("degrade") && ds.at("degrade").contains("voxel_mm"))) {
    c.dataset.degrade.voxel_mm = c.dataset.phantom.voxel_mm;
  }
  c.dataset.master_seed = derive_seed(c.master_seed, {kDatasetKey});
  c.dataset.workers = c.workers;
  as_config_error("/dataset/phantom", [&] {
    c.dataset.phantom.validate();
    return 0;
  });

  const auto& sch = doc.at("schedule");
  const int T = sch.at("timesteps").get<int>();
  const double b0 = sch.at("beta_start").get<double>();
  const double b1 = sch.at("beta_end").get<double>();
  if (b1 < b0) throw ConfigError("/schedule/beta_end", "must not be smaller than beta_start");
  c.schedule = as_config_error("/schedule", [&] { return NoiseSchedule::linear(T, b0, b1); });

  c.context_radius = doc.at("context_radius").get<std::size_t>();
  const auto& den = doc.at("denoiser");
  c.denoiser.base_channels = den.at("base_channels").get<int>();
  c.denoiser.depth = den.at("depth").get<int>();
  c.denoiser.embedding_dim = den.at("embedding_dim").get<int>();
  c.denoiser.groups = den.at("groups").get<int>();
  c.denoiser.timesteps = T;
  c.denoiser.context_radius = c.context_radius;
  as_config_error("/denoiser", [&] {
    c.denoiser.validate();
    return 0;
  });
  const auto& pri = doc.at("prior");
  c.prior.base_channels = pri.at("base_channels").get<int>();
  c.prior.depth = pri.at("depth").get<int>();
  c.prior.groups = pri.at("groups").get<int>();
  as_config_error("/prior", [&] {
    c.prior.validate();
    return 0;
  });

  const auto& tr = doc.at("training");
  c.replicates = tr.at("replicates").get<int>();
  c.denoiser_train = TrainConfig::from_json(tr.at("denoiser"));
  c.prior_train = TrainConfig::from_json(tr.at("prior"));
  as_config_error("/training/denoiser", [&] {
    c.denoiser_train.validate();
    return 0;
  });
  as_config_error("/training/prior", [&] {
    c.prior_train.validate();
    return 0;
  });
  const auto& size = c.dataset.phantom.size;
  const std::size_t min_extent = std::min({size.d1, size.d2, size.d3});
  if (c.prior_train.crop > min_extent) {
    throw ConfigError("/training/prior/crop", "crop " + std::to_string(c.prior_train.crop) +
                                                  " exceeds the smallest volume extent " + std::to_string(min_extent));
  }

  c.t_s = doc.at("sampling").at("t_s").get<int>();
  if (c.t_s > T) throw ConfigError("/sampling/t_s", "must not exceed schedule.timesteps = " + std::to_string(T));

  const auto& st = doc.at("studies");
  const json empty = json::object();
  const auto& views = st.contains("views") ? st.at("views") : empty;
  if (views.contains("subsets")) {
    for (const auto& s : views.at("subsets")) c.views_study.subsets.push_back(parse_views(s));
  } else {
    c.views_study.subsets = {{kAllViews.begin(), kAllViews.end()}};
  }
  c.views_study.replicates = parse_replicates(views, c.replicates, "/studies/views");

  const auto& seq = st.contains("sequential") ? st.at("sequential") : empty;
  if (seq.contains("orders")) {
    for (const auto& o : seq.at("orders")) c.sequential_study.orders.push_back(parse_views(o));
  } else {
    c.sequential_study.orders = {{ViewAxis::kAxial, ViewAxis::kCoronal, ViewAxis::kSagittal},
                                 {ViewAxis::kCoronal, ViewAxis::kSagittal, ViewAxis::kAxial},
                                 {ViewAxis::kSagittal, ViewAxis::kAxial, ViewAxis::kCoronal}};
  }
  c.sequential_study.replicates = parse_replicates(seq, c.replicates, "/studies/sequential");

  const auto& ctx = st.contains("context") ? st.at("context") : empty;
  c.context_study.radii = ctx.contains("radii") ? ctx.at("radii").get<std::vector<std::size_t>>()
                                                : std::vector<std::size_t>{c.context_radius};
  c.context_study.replicates = parse_replicates(ctx, c.replicates, "/studies/context");

  const auto& ts = st.contains("ts") ? st.at("ts") : empty;
  c.ts_study.interval = ts.value("interval", std::max(1, T / 10));
  if (c.ts_study.interval > T) {
    throw ConfigError("/studies/ts/interval", "must not exceed schedule.timesteps = " + std::to_string(T));
  }
  c.ts_study.no_prior = ts.value("no_prior", true);
  c.ts_study.replicates = parse_replicates(ts, c.replicates, "/studies/ts");

  c.test_limit = doc.at("eval").value("test_limit", std::size_t{0});
  return c;
}

std::string RunConfig::hash() const {
  json d = doc;
  d.erase("output_dir");
  d.erase("dataset_path");
  d.erase("execution");
  return json_hash(d);
}

RunConfig resolve_run_config(const ConfigSources& sources) {
  json doc;
  if (!sources.preset.empty() || !sources.config_file) {
    doc = preset(sources.preset.empty() ? "desk" : sources.preset);
  }
  if (sources.config_file) {
    std::ifstream in(*sources.config_file);
    if (!in) throw ConfigError("--config", "cannot read " + sources.config_file->string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("--config", sources.config_file->string() + ": " + e.what());
    }
    if (doc.is_null()) {
      doc = std::move(user);
    } else {
      doc.merge_patch(user);
    }
  }
  if (sources.seed) doc["master_seed"] = *sources.seed;
  if (sources.output_dir) doc["output_dir"] = sources.output_dir->string();
  return RunConfig::from_json(doc);
}

std::string Variant::key() const {
  if (prior_only()) return kPriorMethod;
  std::string k = mode == SamplerMode::kAveraging ? "avg_" : "seq_";
  k += join_views(views, "-");
  k += use_prior ? "_ts" + std::to_string(t_s) : std::string("_noprior");
  k += "_s" + std::to_string(context_radius);
  return k;
}

TrainTarget parse_train_target(std::string_view name) {
  if (name == "prior") return TrainTarget::kPrior;
  return view_target(parse_view_axis(name));
}

Experiment::Experiment(RunConfig config, Logger log) : config_(std::move(config)), log_(std::move(log)) {}

void Experiment::log(const std::string& message) const {
  static std::mutex mutex;
  if (!log_) return;
  std::lock_guard lock(mutex);
  log_(message);
}

fs::path Experiment::dataset_dir() const {
  return config_.dataset_path ? *config_.dataset_path : config_.output_dir / "dataset";
}

fs::path Experiment::prior_dir(int replicate) const {
  return config_.output_dir / "models" / replicate_dir(replicate) / "prior";
}

fs::path Experiment::view_dir(int replicate, std::size_t context_radius, ViewAxis view) const {
  return config_.output_dir / "models" / replicate_dir(replicate) / ("s" + std::to_string(context_radius)) /
         std::string(to_string(view));
}

fs::path Experiment::samples_dir(int replicate, const Variant& variant) const {
  return config_.output_dir / "samples" / replicate_dir(replicate) / variant.key();
}

fs::path Experiment::eval_dir() const { return config_.output_dir / "eval"; }

fs::path Experiment::study_dir(const std::string& study) const { return config_.output_dir / "ablate" / study; }

std::uint64_t Experiment::init_seed(int replicate, TrainTarget target, std::size_t context_radius) const {
  return derive_seed(config_.master_seed, {kInitKey, static_cast<std::uint64_t>(replicate),
                                           static_cast<std::uint64_t>(target), context_radius});
}

std::uint64_t Experiment::train_seed(int replicate, TrainTarget target, std::size_t context_radius) const {
  return derive_seed(config_.master_seed, {kTrainKey, static_cast<std::uint64_t>(replicate),
                                           static_cast<std::uint64_t>(target), context_radius});
}

std::uint64_t Experiment::sample_seed(int replicate) const {
  return derive_seed(config_.master_seed, {kSampleKey, static_cast<std::uint64_t>(replicate)});
}

std::vector<std::string> Experiment::provenance_lines() const {
  return {"config_hash: " + config_.hash(), "master_seed: " + std::to_string(config_.master_seed),
          "code_version: " + code_version()};
}

Variant Experiment::main_variant() const {
  Variant v;
  v.t_s = config_.t_s;
  v.context_radius = config_.context_radius;
  return v;
}

Dataset Experiment::cmd_dataset() {
  const auto dir = dataset_dir();
  const json spec = config_.dataset.to_json();
  if (has_manifest(dir)) {
    const auto m = read_manifest_unverified(dir);
    if (m.kind != "dataset" || m.payload.value("spec", json()) != spec) {
      throw ConfigError("/dataset", dir.string() + " holds a dataset built from a different specification");
    }
    log("dataset: reusing " + dir.string());
    return Dataset::open(dir);
  }
  log("dataset: building " + std::to_string(config_.dataset.n_train) + " train / " +
      std::to_string(config_.dataset.n_test) + " test pairs in " + dir.string());
  build_dataset(config_.dataset, dir, false,
                {{"config_hash", config_.hash()}, {"master_seed", config_.master_seed}});
  return Dataset::open(dir);
}

Dataset Experiment::open_dataset() const {
  const auto dir = dataset_dir();
  if (!has_manifest(dir)) {
    throw DependencyError("missing dataset " + dir.string() + " (run the dataset stage first)");
  }
  const auto m = read_manifest_unverified(dir);
  if (m.kind != "dataset" || m.payload.value("spec", json()) != config_.dataset.to_json()) {
    throw ConfigError("/dataset", dir.string() + " holds a dataset built from a different specification");
  }
  return Dataset::open(dir);
}

TrainResult Experiment::cmd_train(TrainTarget target, int replicate, std::size_t context_radius,
                                  const TrainControl& control) {
  if (replicate < 0 || replicate >= config_.replicates) {
    throw ConfigError("--replicate", "replicate " + std::to_string(replicate) + " outside [0, " +
                                         std::to_string(config_.replicates) + ")");
  }
  const Dataset ds = open_dataset();
  TrainControl c = control;
  c.provenance["config_hash"] = config_.hash();
  c.provenance["master_seed"] = config_.master_seed;
  c.provenance["replicate"] = replicate;
  c.provenance["target"] = target_name(target);
  if (target == TrainTarget::kPrior) {
    Prior3DConfig model = config_.prior;
    model.seed = init_seed(replicate, target, 0);
    TrainConfig train = config_.prior_train;
    train.seed = train_seed(replicate, target, 0);
    log("train: prior, replicate " + std::to_string(replicate));
    return train_prior(ds, model, train, prior_dir(replicate), c);
  }
  Denoiser25DConfig model = config_.denoiser;
  model.context_radius = context_radius;
  model.seed = init_seed(replicate, target, context_radius);
  TrainConfig train = config_.denoiser_train;
  train.seed = train_seed(replicate, target, context_radius);
  const auto view = target_view(target);
  log("train: " + target_name(target) + " denoiser, replicate " + std::to_string(replicate) + ", s=" +
      std::to_string(context_radius));
  return train_view(ds, view, model, config_.schedule, train, view_dir(replicate, context_radius, view), c);
}

std::vector<Experiment::TrainJob> Experiment::training_plan() const {
  std::vector<TrainJob> jobs;
  std::set<std::tuple<int, int, std::size_t>> seen;
  auto add = [&](TrainTarget t, int r, std::size_t s) {
    if (seen.insert({r, static_cast<int>(t), s}).second) jobs.push_back({t, r, s});
  };
  for (int r = 0; r < config_.replicates; ++r) {
    add(TrainTarget::kPrior, r, 0);
    for (auto v : kAllViews) add(view_target(v), r, config_.context_radius);
  }
  for (auto s : config_.context_study.radii) {
    for (int r : config_.context_study.replicates) {
      for (auto v : kAllViews) add(view_target(v), r, s);
    }
  }
  return jobs;
}

ViewModelSet Experiment::load_models(int replicate, const Variant& variant) const {
  const auto pdir = prior_dir(replicate);
  if (!checkpoint_complete(pdir, "prior")) {
    throw DependencyError("missing trained prior " + pdir.string() + " (run: train prior --replicate " +
                          std::to_string(replicate) + ")");
  }
  Prior3DConfig pcfg = config_.prior;
  pcfg.seed = init_seed(replicate, TrainTarget::kPrior, 0);
  TrainConfig ptrain = config_.prior_train;
  ptrain.seed = train_seed(replicate, TrainTarget::kPrior, 0);
  check_checkpoint_config(pdir, pcfg.to_json(), ptrain.to_json(), nullptr);

  if (variant.prior_only()) {
    auto loaded = load_prior(pdir);
    ViewModelSet set;
    set.prior = loaded.model;
    set.schedule = config_.schedule;
    set.normalization = loaded.normalization;
    return set;
  }
  std::map<ViewAxis, fs::path> dirs;
  const json schedule = config_.schedule.to_json();
  for (auto v : variant.views) {
    const auto dir = view_dir(replicate, variant.context_radius, v);
    if (!checkpoint_complete(dir, "denoiser")) {
      throw DependencyError("missing trained " + std::string(to_string(v)) + " denoiser " + dir.string() +
                            " (run: train " + std::string(to_string(v)) + " --replicate " +
                            std::to_string(replicate) + " --context " + std::to_string(variant.context_radius) +
                            ")");
    }
    Denoiser25DConfig dcfg = config_.denoiser;
    dcfg.context_radius = variant.context_radius;
    dcfg.seed = init_seed(replicate, view_target(v), variant.context_radius);
    TrainConfig dtrain = config_.denoiser_train;
    dtrain.seed = train_seed(replicate, view_target(v), variant.context_radius);
    check_checkpoint_config(dir, dcfg.to_json(), dtrain.to_json(), &schedule);
    dirs[v] = dir;
  }
  return ViewModelSet::load(dirs, pdir);
}

std::vector<SamplePair> Experiment::test_pairs(bool normalized) const {
  const Dataset ds = open_dataset();
  const std::size_t limit = config_.test_limit == 0 ? std::numeric_limits<std::size_t>::max() : config_.test_limit;
  return ds.load("test", normalized, limit);
}

fs::path Experiment::cmd_sample(const Variant& variant, int replicate) {
  const auto dir = samples_dir(replicate, variant);
  const auto pairs = test_pairs(true);
  const ViewModelSet models = load_models(replicate, variant);

  json model_hashes = {{"prior", ema_hash(prior_dir(replicate))}};
  if (!variant.prior_only()) {
    for (auto v : variant.views) {
      model_hashes[std::string(to_string(v))] = ema_hash(view_dir(replicate, variant.context_radius, v));
    }
  }
  json ids = json::array();
  for (const auto& p : pairs) ids.push_back(p.id);
  const json payload = {{"variant", variant.key()},
                        {"replicate", replicate},
                        {"seed", sample_seed(replicate)},
                        {"dataset", sha256_file(dataset_dir() / kManifestName)},
                        {"models", model_hashes},
                        {"ids", ids}};
  if (has_manifest(dir) && read_manifest_unverified(dir).payload == payload) {
    load_manifest(dir);
    log("sample: reusing " + dir.string());
    return dir;
  }
  if (fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);

  SamplerConfig sc;
  sc.t_s = variant.t_s;
  sc.views = variant.views;
  sc.mode = variant.mode;
  if (variant.mode == SamplerMode::kSequential) sc.order = variant.views;
  sc.use_prior = variant.use_prior;
  sc.slice_batch = config_.slice_batch;
  // Volumes are spread over the workers; each chain runs single-threaded.
  sc.workers = pairs.size() >= config_.workers ? 1 : config_.workers;
  const std::size_t outer = pairs.size() >= config_.workers ? config_.workers : 1;

  std::vector<std::string> files(pairs.size());
  std::atomic<std::size_t> done{0};
  parallel_for(pairs.size(), outer, [&](std::size_t i) {
    const Volume& x = pairs[i].input;
    Volume y;
    if (variant.prior_only()) {
      const auto& n = x.meta().at("normalization");
      y = denormalize(models.prior->predict(x), n.at("lo").get<double>(), n.at("hi").get<double>());
      y.meta() = x.meta();
      y.meta().erase("normalization");
    } else {
      auto c = sc;
      c.seed = input_seed(sample_seed(replicate), x);
      y = madm_sample(x, models, c);
    }
    y.meta()["id"] = pairs[i].id;
    y.meta()["variant"] = variant.key();
    files[i] = volume_name(i);
    write_volume(y, dir / files[i]);
    log("sample: " + variant.key() + " r" + std::to_string(replicate) + " " + std::to_string(++done) + "/" +
        std::to_string(pairs.size()));
  });
  json created = {{"config_hash", config_.hash()}, {"master_seed", config_.master_seed}};
  write_manifest(dir, "samples", files, created, payload);
  return dir;
}

std::vector<Volume> Experiment::load_samples(const Variant& variant, int replicate) {
  const auto dir = cmd_sample(variant, replicate);
  const auto m = load_manifest(dir);
  std::vector<Volume> out;
  for (std::size_t i = 0; i < m.payload.at("ids").size(); ++i) out.push_back(read_volume(dir / volume_name(i)));
  return out;
}

void Experiment::score(EvalReport& report, const std::string& method, int replicate, const std::vector<Volume>& preds,
                       const std::vector<SamplePair>& raw) const {
  if (preds.size() != raw.size()) throw ShapeError("score: prediction and test set sizes differ");
  std::vector<EvalReport> parts(raw.size());
  parallel_for(raw.size(), config_.workers, [&](std::size_t i) {
    parts[i].add(raw[i].id, raw[i].dose_fraction, method, replicate, preds[i], raw[i].target, raw[i].lesion_masks);
  });
  for (const auto& p : parts) {
    for (const auto& r : p.rows()) report.add_row(r);
    for (const auto& l : p.lesion_rows()) report.add_lesion_row(l);
  }
}

EvalReport Experiment::cmd_eval() {
  const auto raw = test_pairs(false);
  EvalReport report;
  std::vector<Volume> inputs;
  for (const auto& p : raw) inputs.push_back(p.input);
  score(report, kInputMethod, 0, inputs, raw);
  Variant prior;
  prior.t_s = 0;
  const Variant main = main_variant();
  std::vector<std::string> methods{kInputMethod, kPriorMethod};
  if (!main.prior_only()) methods.push_back(main.key());
  for (int r = 0; r < config_.replicates; ++r) {
    score(report, kPriorMethod, r, load_samples(prior, r), raw);
    if (!main.prior_only()) score(report, main.key(), r, load_samples(main, r), raw);
  }
  StudyResult result{"eval", report, methods, eval_dir()};
  write_study(result);
  return report;
}

StudyResult Experiment::run_study(const std::string& name, const std::vector<Variant>& variants,
                                  const std::vector<int>& replicates) {
  const auto raw = test_pairs(false);
  StudyResult result;
  result.name = name;
  result.dir = study_dir(name);
  std::set<std::string> seen;
  for (const auto& v : variants) {
    if (!seen.insert(v.key()).second) continue;
    result.methods.push_back(v.key());
    for (int r : replicates) score(result.report, v.key(), r, load_samples(v, r), raw);
  }
  write_study(result);
  return result;
}

void Experiment::write_study(const StudyResult& result) const {
  fs::create_directories(result.dir);
  const auto header = provenance_lines();
  write_text(result.dir / "volume_metrics.csv", result.report.volume_csv(header));
  write_text(result.dir / "lesion_metrics.csv", result.report.lesion_csv(header));
  write_text(result.dir / "table.csv", summary_table_csv(result.report, result.methods, header));
}

StudyResult Experiment::cmd_ablate(const std::string& study) {
  const Variant main = main_variant();
  std::vector<Variant> variants;
  if (study == "views") {
    for (const auto& subset : config_.views_study.subsets) {
      Variant v = main;
      v.views = subset;
      variants.push_back(v);
    }
    return run_study(study, variants, config_.views_study.replicates);
  }
  if (study == "sequential") {
    for (const auto& order : config_.sequential_study.orders) {
      Variant v = main;
      v.mode = SamplerMode::kSequential;
      v.views = order;
      variants.push_back(v);
    }
    variants.push_back(main);
    return run_study(study, variants, config_.sequential_study.replicates);
  }
  if (study == "context") {
    for (auto s : config_.context_study.radii) {
      Variant v = main;
      v.context_radius = s;
      variants.push_back(v);
    }
    return run_study(study, variants, config_.context_study.replicates);
  }
  if (study == "ts") {
    const int T = config_.schedule.steps();
    for (int t = 0; t <= T; t += config_.ts_study.interval) {
      Variant v = main;
      v.t_s = t;
      variants.push_back(v);
    }
    if (config_.ts_study.no_prior) {
      Variant v = main;
      v.t_s = T;
      v.use_prior = false;
      variants.push_back(v);
    }
    auto result = run_study(study, variants, config_.ts_study.replicates);
    const auto points = sweep_points(result.report, variants);
    const auto header = provenance_lines();
    write_text(result.dir / "sweep.csv", sweep_csv(points, header));
    PlotSeries with_prior{"prior + diffusion", {}, false};
    PlotSeries no_prior{"pure-noise chain", {}, true};
    for (const auto& p : points) (p.use_prior ? with_prior : no_prior).points.emplace_back(p.t_s, p.median_nmse);
    std::vector<PlotSeries> series{with_prior};
    if (!no_prior.points.empty()) series.push_back(no_prior);
    std::string comment;
    for (const auto& h : header) comment += (comment.empty() ? "" : "; ") + h;
    write_text(result.dir / "sweep.svg",
               line_plot_svg("Median test NMSE vs sampling start", "start timestep t_s", "median NMSE", series,
                             comment));
    return result;
  }
  throw ConfigError("study", "unknown study '" + study + "' (expected views, sequential, context or ts)");
}

fs::path Experiment::cmd_report() {
  std::ostringstream md;
  md << "# Results\n\n";
  for (const auto& line : provenance_lines()) md << "- " << line << "\n";
  bool any = false;
  auto section = [&](const std::string& title, const fs::path& dir) {
    if (!fs::exists(dir / "table.csv")) return;
    any = true;
    md << "\n## " << title << "\n\n";
    std::istringstream in(read_text(dir / "table.csv"));
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::string row = "|";
      std::stringstream cells(line);
      std::string cell;
      std::size_t n = 0;
      while (std::getline(cells, cell, ',')) {
        row += " " + cell + " |";
        ++n;
      }
      md << row << "\n";
      if (header) {
        md << "|";
        for (std::size_t i = 0; i < n; ++i) md << " --- |";
        md << "\n";
        header = false;
      }
    }
    if (fs::exists(dir / "sweep.svg")) {
      md << "\n![sweep](" << fs::relative(dir / "sweep.svg", config_.output_dir).generic_string() << ")\n";
    }
  };
  section("Main comparison", eval_dir());
  section("View subsets", study_dir("views"));
  section("Sequential orders", study_dir("sequential"));
  section("Context radius", study_dir("context"));
  section("Start timestep sweep", study_dir("ts"));
  if (!any) throw DependencyError("no result tables under " + config_.output_dir.string() + " (run eval or ablate first)");
  const auto path = config_.output_dir / "report.md";
  write_text(path, md.str());
  return path;
}

std::vector<SweepPoint> sweep_points(const EvalReport& report, const std::vector<Variant>& variants) {
  std::vector<SweepPoint> points;
  for (const auto& v : variants) {
    const auto nmse = report.column(v.key(), &VolumeRow::nmse);
    if (nmse.empty()) throw DependencyError("sweep: no rows for " + v.key());
    const auto s = summarize(nmse);
    points.push_back({v.t_s, v.use_prior, s.median, s.mean, median(report.column(v.key(), &VolumeRow::psnr_db))});
  }
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    if (a.use_prior != b.use_prior) return a.use_prior;
    return a.t_s < b.t_s;
  });
  return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points, const std::vector<std::string>& header_comment) {
  std::ostringstream os;
  for (const auto& line : header_comment) os << "# " << line << "\n";
  os << "t_s,use_prior,nmse_median,nmse_mean,psnr_median\n";
  for (const auto& p : points) {
    os << p.t_s << ',' << (p.use_prior ? "true" : "false") << ',' << fmt(p.median_nmse, "%.8g") << ','
       << fmt(p.mean_nmse, "%.8g") << ',' << format_psnr(p.median_psnr) << "\n";
  }
  return os.str();
}

std::string summary_table_csv(const EvalReport& report, const std::vector<std::string>& methods,
                              const std::vector<std::string>& header_comment) {
  std::ostringstream os;
  for (const auto& line : header_comment) os << "# " << line << "\n";
  os << "method,n,psnr_median,psnr_mean,psnr_std,ssim_median,ssim_mean,rmse_median,nmse_median,nmse_mean,"
        "lesion_error_median,lesion_error_mean\n";
  for (const auto& m : methods) {
    const auto psnr = summarize(report.column(m, &VolumeRow::psnr_db));
    const auto ssim = summarize(report.column(m, &VolumeRow::ssim));
    const auto rmse = summarize(report.column(m, &VolumeRow::rmse));
    const auto nmse = summarize(report.column(m, &VolumeRow::nmse));
    std::vector<double> lesion;
    for (const auto& l : report.lesion_rows()) {
      if (l.method == m) lesion.push_back(l.abs_mean_error);
    }
    os << m << ',' << psnr.n << ',' << format_psnr(psnr.median) << ',' << format_psnr(psnr.mean) << ','
       << fmt(psnr.std, "%.4f") << ',' << fmt(ssim.median, "%.6f") << ',' << fmt(ssim.mean, "%.6f") << ','
       << fmt(rmse.median, "%.6g") << ',' << fmt(nmse.median, "%.6g") << ',' << fmt(nmse.mean, "%.6g") << ',';
    if (lesion.empty()) {
      os << ",\n";
    } else {
      const auto s = summarize(lesion);
      os << fmt(s.median, "%.6g") << ',' << fmt(s.mean, "%.6g") << "\n";
    }
  }
  return os.str();
}

}  // namespace madm
