#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "json.hpp"
#include "madm/models.hpp"
#include "madm/phantom.hpp"
#include "madm/rng.hpp"
#include "madm/schedule.hpp"

namespace madm {

struct TrainConfig {
  int steps = 20000;
  int batch_size = 16;
  double lr0 = 1e-4;
  double ema_rate = 0.9999;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::size_t crop = 32;     // prior training: cubic crop edge, 0 for whole volumes

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// lr0 * (1 - step / steps) for 0-based optimizer step indices.
double learning_rate(const TrainConfig& config, int step);

/// Mean over voxels of (pred - target)^2.
double prior_loss(const Volume& pred, const Volume& target);

/// Noises y0 to level t with `eps` and returns the mean squared error between
/// the model's noise estimate and eps.
double diffusion_loss(const EpsPredictor& model, const Plane& y0, const SliceStack& condition, int t,
                      const Plane& eps, const NoiseSchedule& schedule);

/// ema <- rate * ema + (1 - rate) * current, element-wise.
void ema_update(std::span<float> ema, std::span<const float> current, double rate);

/// One diffusion training example before tensors are built.
struct SliceExample {
  std::size_t sample = 0;
  std::size_t slice = 0;
  int t = 1;
};

/// Uniform over training volumes, slice indices along the view axis and
/// timesteps 1..T.
SliceExample draw_slice_example(Rng& rng, std::size_t n_samples, std::size_t extent, int steps);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
};

std::string train_log_csv(const std::vector<TrainLogRow>& rows);
std::vector<TrainLogRow> parse_train_log(const std::string& text);

struct TrainControl {
  /// Stop (writing a resumable checkpoint) once this many steps are done.
  int stop_after = std::numeric_limits<int>::max();
  /// Continue from a partial checkpoint in the output directory.
  bool resume = true;
  /// Extra creation metadata recorded in the checkpoint manifest.
  nlohmann::json provenance = nlohmann::json::object();
  /// Called after every optimizer step.
  std::function<void(const TrainLogRow&)> on_step;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<TrainLogRow> log;
  int completed_steps = 0;
  bool finished = false;
};

/// Trains the one-step prior on random crops of the training split.
TrainResult train_prior(const Dataset& dataset, const Prior3DConfig& model, const TrainConfig& config,
                        const std::filesystem::path& out_dir, const TrainControl& control = {});

/// Trains the 2.5D denoiser of one view on (sample, slice, t, eps) examples.
TrainResult train_view(const Dataset& dataset, ViewAxis view, const Denoiser25DConfig& model,
                       const NoiseSchedule& schedule, const TrainConfig& config,
                       const std::filesystem::path& out_dir, const TrainControl& control = {});

/// True when `dir` holds a finished checkpoint of the given kind.
bool checkpoint_complete(const std::filesystem::path& dir, const std::string& kind);

}  // namespace madm
