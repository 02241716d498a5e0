#include "madm/models.hpp"

#include <cstring>

#include "madm/error.hpp"
#include "madm/nn.hpp"
#include "madm/store.hpp"

namespace madm {

namespace fs = std::filesystem;

namespace {

std::vector<char> read_bytes(const fs::path& path) {
  const auto text = read_text(path);
  return {text.begin(), text.end()};
}

nlohmann::json read_checkpoint_config(const fs::path& dir, const std::string& kind) {
  const auto manifest = load_manifest(dir);
  if (manifest.kind != kind) {
    throw FormatError(FormatError::Kind::kInvalid,
                      dir.string() + " holds a '" + manifest.kind + "' artifact, expected '" + kind + "'");
  }
  return nlohmann::json::parse(read_text(dir / kCheckpointConfig));
}

}  // namespace

void Denoiser25DConfig::validate() const {
  if (base_channels < 1 || depth < 0 || embedding_dim < 0 || groups < 1) {
    throw RangeError("denoiser config: channel, depth, embedding and group sizes must be positive");
  }
  if (depth > 6) throw RangeError("denoiser config: depth above 6 is not supported");
  if (timesteps < 1) throw RangeError("denoiser config: timesteps must be positive");
}

nlohmann::json Denoiser25DConfig::to_json() const {
  return {{"context_radius", context_radius}, {"base_channels", base_channels},
          {"depth", depth},                   {"embedding_dim", embedding_dim},
          {"groups", groups},                 {"timesteps", timesteps},
          {"seed", seed}};
}

Denoiser25DConfig Denoiser25DConfig::from_json(const nlohmann::json& j) {
  Denoiser25DConfig c;
  c.context_radius = j.value("context_radius", c.context_radius);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.depth = j.value("depth", c.depth);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.groups = j.value("groups", c.groups);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.seed = j.value("seed", c.seed);
  return c;
}

void Prior3DConfig::validate() const {
  if (base_channels < 1 || depth < 0 || groups < 1) {
    throw RangeError("prior config: channel, depth and group sizes must be positive");
  }
  if (depth > 5) throw RangeError("prior config: depth above 5 is not supported");
}

nlohmann::json Prior3DConfig::to_json() const {
  return {{"base_channels", base_channels}, {"depth", depth}, {"groups", groups}, {"seed", seed}};
}

Prior3DConfig Prior3DConfig::from_json(const nlohmann::json& j) {
  Prior3DConfig c;
  c.base_channels = j.value("base_channels", c.base_channels);
  c.depth = j.value("depth", c.depth);
  c.groups = j.value("groups", c.groups);
  c.seed = j.value("seed", c.seed);
  return c;
}

Plane predict_eps(const EpsPredictor& model, const Plane& noisy, const SliceStack& condition, int t) {
  if (condition.radius != model.context_radius() ||
      condition.planes.size() != 2 * model.context_radius() + 1) {
    throw ShapeError("condition stack radius " + std::to_string(condition.radius) +
                     " does not match model radius " + std::to_string(model.context_radius()));
  }
  const std::size_t plane = noisy.rows * noisy.cols;
  std::vector<float> input;
  input.reserve(plane * (condition.planes.size() + 1));
  input.insert(input.end(), noisy.values.begin(), noisy.values.end());
  for (const auto& p : condition.planes) {
    if (p.rows != noisy.rows || p.cols != noisy.cols) {
      throw ShapeError("condition plane shape differs from the noisy slice");
    }
    input.insert(input.end(), p.values.begin(), p.values.end());
  }
  Plane out(noisy.rows, noisy.cols);
  model.predict_eps_batch(input, 1, noisy.rows, noisy.cols, t, out.values);
  return out;
}

Volume predict_prior(const PriorPredictor& model, const Volume& x) { return model.predict(x); }

std::shared_ptr<EpsPredictor> make_denoiser(const Denoiser25DConfig& config) {
  return std::make_shared<nn::TorchDenoiser>(config, nn::make_denoiser_net(config));
}

std::shared_ptr<PriorPredictor> make_prior(const Prior3DConfig& config) {
  return std::make_shared<nn::TorchPrior>(config, nn::make_prior_net(config));
}

void set_compute_threads(int threads) {
  if (threads < 1) throw RangeError("thread count must be positive");
  torch::set_num_threads(threads);
}

std::size_t parameter_count(const Denoiser25DConfig& config) {
  return nn::TorchDenoiser(config, nn::make_denoiser_net(config)).parameter_count();
}

std::size_t parameter_count(const Prior3DConfig& config) {
  return nn::TorchPrior(config, nn::make_prior_net(config)).parameter_count();
}

LoadedDenoiser load_denoiser(const fs::path& dir, WeightSet which) {
  const auto cfg = read_checkpoint_config(dir, "denoiser");
  LoadedDenoiser out;
  out.config = Denoiser25DConfig::from_json(cfg.at("model"));
  out.schedule = NoiseSchedule::from_json(cfg.at("schedule"));
  out.view = parse_view_axis(cfg.at("view").get<std::string>());
  out.normalization = cfg.value("normalization", nlohmann::json::object());
  auto net = nn::make_denoiser_net(out.config);
  nn::decode_weights(*net, read_bytes(dir / (which == WeightSet::kEma ? kEmaFile : kWeightsFile)));
  out.model = std::make_shared<nn::TorchDenoiser>(out.config, net);
  return out;
}

LoadedPrior load_prior(const fs::path& dir, WeightSet which) {
  const auto cfg = read_checkpoint_config(dir, "prior");
  LoadedPrior out;
  out.config = Prior3DConfig::from_json(cfg.at("model"));
  out.normalization = cfg.value("normalization", nlohmann::json::object());
  auto net = nn::make_prior_net(out.config);
  nn::decode_weights(*net, read_bytes(dir / (which == WeightSet::kEma ? kEmaFile : kWeightsFile)));
  out.model = std::make_shared<nn::TorchPrior>(out.config, net);
  return out;
}

void ViewModelSet::validate() const {
  if (views.empty()) throw RangeError("view model set needs at least one view");
  if (!prior) throw DependencyError("view model set has no prior network");
  for (const auto& [axis, model] : views) {
    if (!model) throw DependencyError("no weights for view " + std::string(to_string(axis)));
    if (model->context_radius() != context_radius) {
      throw ShapeError("view " + std::string(to_string(axis)) + " uses context radius " +
                       std::to_string(model->context_radius()) + ", set uses " +
                       std::to_string(context_radius));
    }
    if (model->timesteps() != schedule.steps()) {
      throw RangeError("view " + std::string(to_string(axis)) + " was built for " +
                       std::to_string(model->timesteps()) + " timesteps, schedule has " +
                       std::to_string(schedule.steps()));
    }
  }
}

ViewModelSet ViewModelSet::load(const std::map<ViewAxis, fs::path>& view_dirs,
                                const fs::path& prior_dir) {
  ViewModelSet set;
  auto prior = load_prior(prior_dir);
  set.prior = prior.model;
  set.normalization = prior.normalization;
  bool first = true;
  for (const auto& [axis, dir] : view_dirs) {
    auto loaded = load_denoiser(dir);
    if (loaded.view != axis) {
      throw ShapeError(dir.string() + " holds the " + std::string(to_string(loaded.view)) +
                       " model, expected " + std::string(to_string(axis)));
    }
    if (first) {
      set.schedule = loaded.schedule;
      set.context_radius = loaded.config.context_radius;
      first = false;
    } else if (!(loaded.schedule == set.schedule) ||
               loaded.config.context_radius != set.context_radius) {
      throw ShapeError("view models disagree on schedule or context radius");
    }
    if (loaded.normalization != set.normalization) {
      throw ShapeError("view model " + dir.string() + " uses a different normalization than the prior");
    }
    set.views[axis] = loaded.model;
  }
  set.validate();
  return set;
}

}  // namespace madm
