#include "madm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "madm/error.hpp"
#include "madm/nn.hpp"
#include "madm/store.hpp"

namespace madm {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (steps <= 0) throw RangeError("train config: steps must be positive");
  if (batch_size <= 0) throw RangeError("train config: batch_size must be positive");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw RangeError("train config: lr0 must be positive");
  if (!(ema_rate > 0.0 && ema_rate < 1.0)) throw RangeError("train config: ema_rate must lie in (0, 1)");
  if (checkpoint_every < 0) throw RangeError("train config: checkpoint_every must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size},
          {"lr0", lr0},     {"ema_rate", ema_rate},
          {"seed", seed},   {"checkpoint_every", checkpoint_every},
          {"crop", crop}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr0 = j.value("lr0", c.lr0);
  c.ema_rate = j.value("ema_rate", c.ema_rate);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.crop = j.value("crop", c.crop);
  return c;
}

double learning_rate(const TrainConfig& config, int step) {
  return config.lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(config.steps));
}

double prior_loss(const Volume& pred, const Volume& target) {
  if (pred.dims() != target.dims()) throw ShapeError("prior_loss: prediction and target dims differ");
  if (pred.empty()) throw ShapeError("prior_loss: empty volumes");
  const auto a = pred.voxels();
  const auto b = target.voxels();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double diffusion_loss(const EpsPredictor& model, const Plane& y0, const SliceStack& condition, int t,
                      const Plane& eps, const NoiseSchedule& schedule) {
  if (eps.rows != y0.rows || eps.cols != y0.cols) throw ShapeError("diffusion_loss: eps and y0 shapes differ");
  Plane noisy(y0.rows, y0.cols);
  diffuse(y0.values, eps.values, t, schedule, noisy.values);
  const Plane pred = predict_eps(model, noisy, condition, t);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.values[i]) - static_cast<double>(eps.values[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

void ema_update(std::span<float> ema, std::span<const float> current, double rate) {
  if (ema.size() != current.size()) throw ShapeError("ema_update: parameter sizes differ");
  if (!(rate >= 0.0 && rate <= 1.0)) throw RangeError("ema_update: rate must lie in [0, 1]");
  for (std::size_t i = 0; i < ema.size(); ++i) {
    ema[i] = static_cast<float>(rate * ema[i] + (1.0 - rate) * current[i]);
  }
}

SliceExample draw_slice_example(Rng& rng, std::size_t n_samples, std::size_t extent, int steps) {
  if (n_samples == 0 || extent == 0 || steps < 1) throw RangeError("draw_slice_example: empty range");
  SliceExample e;
  e.sample = std::uniform_int_distribution<std::size_t>(0, n_samples - 1)(rng);
  e.slice = std::uniform_int_distribution<std::size_t>(0, extent - 1)(rng);
  e.t = std::uniform_int_distribution<int>(1, steps)(rng);
  return e;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "step,loss,lr,wall_time_s\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.3f\n", r.step, r.loss, r.lr, r.wall_time_s);
    out += buf;
  }
  return out;
}

std::vector<TrainLogRow> parse_train_log(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<TrainLogRow> rows;
  if (!std::getline(in, line) || line != "step,loss,lr,wall_time_s") {
    throw FormatError(FormatError::Kind::kInvalid, "training log header missing");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrainLogRow r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &r.step, &r.loss, &r.lr, &r.wall_time_s) != 4) {
      throw FormatError(FormatError::Kind::kInvalid, "bad training log row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

bool checkpoint_complete(const fs::path& dir, const std::string& kind) {
  if (!has_manifest(dir)) return false;
  const auto m = read_manifest_unverified(dir);
  return m.kind == kind && m.payload.value("finished", false);
}

namespace {

std::vector<char> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }
std::string from_bytes(const std::vector<char>& b) { return {b.begin(), b.end()}; }

/// Shared optimizer loop. `step_loss(k, rng)` builds the batch of step k and
/// returns the differentiable loss.
class Trainer {
 public:
  Trainer(nn::UNet net, nn::UNet ema, const TrainConfig& config, std::string kind, nlohmann::json checkpoint_config,
          fs::path out_dir, const TrainControl& control)
      : net_(std::move(net)),
        ema_(std::move(ema)),
        config_(config),
        kind_(std::move(kind)),
        checkpoint_config_(std::move(checkpoint_config)),
        out_dir_(std::move(out_dir)),
        control_(control),
        optimizer_(net_->parameters(), torch::optim::AdamOptions(config.lr0)) {
    net_->train();
    ema_->eval();
    torch::NoGradGuard guard;
    auto src = net_->parameters();
    auto dst = ema_->parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
  }

  nn::UNet& net() noexcept { return net_; }

  template <typename StepLoss>
  TrainResult run(StepLoss&& step_loss) {
    const std::string config_hash = json_hash(checkpoint_config_);
    int start = 0;
    if (has_manifest(out_dir_)) {
      const auto m = read_manifest_unverified(out_dir_);
      if (m.kind != kind_) {
        throw ConfigError(out_dir_.string(), "holds a '" + m.kind + "' artifact, expected '" + kind_ + "'");
      }
      if (m.payload.value("config_hash", std::string()) != config_hash) {
        throw ConfigError(out_dir_.string(), "existing checkpoint was trained with a different config");
      }
      if (!control_.resume) throw IoError(out_dir_.string() + " already holds a checkpoint");
      start = restore();
    } else if (fs::exists(out_dir_) && !fs::is_empty(out_dir_)) {
      throw IoError(out_dir_.string() + " is not empty and holds no checkpoint");
    }
    fs::create_directories(out_dir_);

    const double wall_offset = log_.empty() ? 0.0 : log_.back().wall_time_s;
    const auto t0 = std::chrono::steady_clock::now();
    const int stop = std::min(config_.steps, control_.stop_after);
    int k = start;
    for (; k < stop; ++k) {
      const double lr = learning_rate(config_, k);
      for (auto& group : optimizer_.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
      }
      Rng rng = make_rng(config_.seed, {0x7472616eULL, static_cast<std::uint64_t>(k)});
      optimizer_.zero_grad();
      torch::Tensor loss = step_loss(k, rng);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw NumericalError(kind_ + " training: non-finite loss at step " + std::to_string(k) + " (lr " +
                             std::to_string(lr) + ")");
      }
      loss.backward();
      optimizer_.step();
      update_ema();
      const double wall =
          wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log_.push_back({k, value, lr, wall});
      if (control_.on_step) control_.on_step(log_.back());
      const bool last = k + 1 == stop;
      if (!last && config_.checkpoint_every > 0 && (k + 1) % config_.checkpoint_every == 0) save(k + 1, config_hash);
    }
    if (k > start || !has_manifest(out_dir_)) save(k, config_hash);

    TrainResult result;
    result.checkpoint = out_dir_;
    result.log = log_;
    result.completed_steps = k;
    result.finished = k == config_.steps;
    return result;
  }

 private:
  void update_ema() {
    torch::NoGradGuard guard;
    auto src = net_->parameters();
    auto dst = ema_->parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto s = src[i].contiguous();
      auto& d = dst[i];
      ema_update(std::span<float>(d.data_ptr<float>(), d.numel()),
                 std::span<const float>(s.data_ptr<float>(), s.numel()), config_.ema_rate);
    }
  }

  int restore() {
    const auto m = load_manifest(out_dir_);
    nn::decode_weights(*net_, to_bytes(read_text(out_dir_ / kWeightsFile)));
    nn::decode_weights(*ema_, to_bytes(read_text(out_dir_ / kEmaFile)));
    const auto opt = read_text(out_dir_ / kOptimizerFile);
    nn::decode_optimizer(optimizer_, std::span<const char>(opt.data(), opt.size()));
    log_ = parse_train_log(read_text(out_dir_ / kTrainLogFile));
    const int done = m.payload.at("completed_steps").get<int>();
    if (static_cast<int>(log_.size()) != done) {
      throw CorruptArtifact(out_dir_.string() + ": training log length disagrees with the manifest");
    }
    return done;
  }

  void save(int completed, const std::string& config_hash) {
    // The manifest goes last, so a crash mid-save leaves a detectably broken
    // directory rather than a mismatched one.
    fs::remove(out_dir_ / "manifest.json");
    write_text(out_dir_ / kCheckpointConfig, checkpoint_config_.dump(2) + "\n");
    write_text(out_dir_ / kWeightsFile, from_bytes(nn::encode_weights(*net_)));
    write_text(out_dir_ / kEmaFile, from_bytes(nn::encode_weights(*ema_)));
    write_text(out_dir_ / kOptimizerFile, from_bytes(nn::encode_optimizer(optimizer_)));
    write_text(out_dir_ / kTrainLogFile, train_log_csv(log_));
    nlohmann::json payload = {{"completed_steps", completed},
                              {"steps", config_.steps},
                              {"finished", completed == config_.steps},
                              {"config_hash", config_hash}};
    write_manifest(out_dir_, kind_,
                   {kCheckpointConfig, kWeightsFile, kEmaFile, kOptimizerFile, kTrainLogFile},
                   control_.provenance, payload);
  }

  nn::UNet net_;
  nn::UNet ema_;
  TrainConfig config_;
  std::string kind_;
  nlohmann::json checkpoint_config_;
  fs::path out_dir_;
  TrainControl control_;
  torch::optim::Adam optimizer_;
  std::vector<TrainLogRow> log_;
};

nlohmann::json normalization_json(const Dataset& dataset) {
  return {{"lo", dataset.norm_lo}, {"hi", dataset.norm_hi}};
}

torch::Tensor volume_tensor(const Volume& v) {
  const auto& d = v.dims();
  return torch::from_blob(const_cast<float*>(v.voxels().data()),
                          {static_cast<int64_t>(d.d1), static_cast<int64_t>(d.d2), static_cast<int64_t>(d.d3)},
                          torch::kFloat32);
}

}  // namespace

TrainResult train_prior(const Dataset& dataset, const Prior3DConfig& model, const TrainConfig& config,
                        const fs::path& out_dir, const TrainControl& control) {
  model.validate();
  config.validate();
  const auto pairs = dataset.load("train");
  if (pairs.empty()) throw DependencyError("train_prior: dataset has no training samples");
  const Dims dims = pairs.front().input.dims();
  const std::array<std::size_t, 3> full{dims.d1, dims.d2, dims.d3};
  std::array<std::size_t, 3> crop{};
  for (int a = 0; a < 3; ++a) crop[a] = config.crop == 0 ? full[a] : std::min(config.crop, full[a]);

  std::vector<torch::Tensor> inputs, targets;
  for (const auto& p : pairs) {
    if (p.input.dims() != dims) throw ShapeError("train_prior: training volumes differ in dims");
    inputs.push_back(volume_tensor(p.input));
    targets.push_back(volume_tensor(p.target));
  }

  const nlohmann::json cfg = {{"model", model.to_json()},
                              {"train", config.to_json()},
                              {"normalization", normalization_json(dataset)}};
  Trainer trainer(nn::make_prior_net(model), nn::make_prior_net(model), config, "prior", cfg, out_dir, control);
  return trainer.run([&](int, Rng& rng) {
    std::vector<torch::Tensor> xs, ys;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto i = std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng);
      std::array<int64_t, 3> o{};
      for (int a = 0; a < 3; ++a) {
        o[a] = static_cast<int64_t>(std::uniform_int_distribution<std::size_t>(0, full[a] - crop[a])(rng));
      }
      auto cut = [&](const torch::Tensor& v) {
        return v.narrow(0, o[0], crop[0]).narrow(1, o[1], crop[1]).narrow(2, o[2], crop[2]).unsqueeze(0);
      };
      xs.push_back(cut(inputs[i]));
      ys.push_back(cut(targets[i]));
    }
    const auto x = torch::stack(xs);
    const auto y = torch::stack(ys);
    return nn::mean_squared_error(nn::prior_forward(trainer.net(), x), y);
  });
}

TrainResult train_view(const Dataset& dataset, ViewAxis view, const Denoiser25DConfig& model,
                       const NoiseSchedule& schedule, const TrainConfig& config, const fs::path& out_dir,
                       const TrainControl& control) {
  model.validate();
  config.validate();
  if (model.timesteps != schedule.steps()) {
    throw ConfigError("model.timesteps", "denoiser timesteps " + std::to_string(model.timesteps) +
                                             " differ from schedule length " + std::to_string(schedule.steps()));
  }
  const auto pairs = dataset.load("train");
  if (pairs.empty()) throw DependencyError("train_view: dataset has no training samples");
  const Dims dims = pairs.front().input.dims();
  for (const auto& p : pairs) {
    if (p.input.dims() != dims) throw ShapeError("train_view: training volumes differ in dims");
  }
  const std::size_t n_slices = extent(dims, view);
  const auto [rows, cols] = cross_section(dims, view);
  const auto s = model.context_radius;
  const auto r = static_cast<int64_t>(rows);
  const auto c = static_cast<int64_t>(cols);

  const nlohmann::json cfg = {{"model", model.to_json()},
                              {"schedule", schedule.to_json()},
                              {"view", std::string(to_string(view))},
                              {"train", config.to_json()},
                              {"normalization", normalization_json(dataset)}};
  Trainer trainer(nn::make_denoiser_net(model), nn::make_denoiser_net(model), config, "denoiser", cfg, out_dir,
                  control);
  return trainer.run([&](int, Rng& rng) {
    const auto b = static_cast<int64_t>(config.batch_size);
    auto y0 = torch::empty({b, 1, r, c});
    auto eps = torch::empty({b, 1, r, c});
    auto cond = torch::empty({b, static_cast<int64_t>(2 * s + 1), r, c});
    auto t = torch::empty({b}, torch::kInt64);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (int64_t i = 0; i < b; ++i) {
      const auto e = draw_slice_example(rng, pairs.size(), n_slices, schedule.steps());
      const auto& pair = pairs[e.sample];
      const Plane target = extract_slice(pair.target, view, e.slice);
      std::memcpy(y0[i].data_ptr<float>(), target.values.data(), target.size() * sizeof(float));
      const SliceStack stack = extract_stack(pair.input, view, e.slice, s);
      for (std::size_t k = 0; k < stack.planes.size(); ++k) {
        std::memcpy(cond[i][static_cast<int64_t>(k)].data_ptr<float>(), stack.planes[k].values.data(),
                    stack.planes[k].size() * sizeof(float));
      }
      auto* ep = eps[i].data_ptr<float>();
      for (int64_t k = 0; k < r * c; ++k) ep[k] = normal(rng);
      t[i] = e.t;
    }
    return nn::diffusion_loss(trainer.net(), y0, cond, t, eps, schedule);
  });
}

}  // namespace madm
