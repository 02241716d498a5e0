#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "madm/schedule.hpp"
#include "madm/volume.hpp"

namespace madm {

/// 2.5D conditional noise predictor. Input channels are the noisy target slice
/// followed by the 2s+1 condition slices.
struct Denoiser25DConfig {
  std::size_t context_radius = 4;  // s
  int base_channels = 16;
  int depth = 2;
  int embedding_dim = 32;
  int groups = 8;
  int timesteps = 200;  // T; valid t are 1..T
  std::uint64_t seed = 0;

  int in_channels() const noexcept { return static_cast<int>(2 * context_radius + 2); }
  void validate() const;
  nlohmann::json to_json() const;
  static Denoiser25DConfig from_json(const nlohmann::json& j);
};

/// One-step 3D volume-to-volume network.
struct Prior3DConfig {
  int base_channels = 8;
  int depth = 2;
  int groups = 4;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static Prior3DConfig from_json(const nlohmann::json& j);
};

/// Predicts the noise component of a batch of noisy slices.
class EpsPredictor {
 public:
  virtual ~EpsPredictor() = default;

  virtual std::size_t context_radius() const = 0;
  virtual int timesteps() const = 0;

  /// `input` holds `batch` samples of (2s+2) channels of rows x cols floats:
  /// channel 0 is the noisy slice, channels 1.. the condition stack in offset
  /// order -s..+s. All samples share timestep `t`. Writes batch x rows x cols.
  /// Each sample's output depends only on that sample's input.
  virtual void predict_eps_batch(std::span<const float> input, std::size_t batch, std::size_t rows,
                                 std::size_t cols, int t, std::span<float> out) const = 0;
};

/// One-step prior estimate of the clean volume.
class PriorPredictor {
 public:
  virtual ~PriorPredictor() = default;
  virtual Volume predict(const Volume& x) const = 0;
};

/// Packs one noisy slice and its condition stack into the channel layout of
/// EpsPredictor::predict_eps_batch and runs a single prediction.
Plane predict_eps(const EpsPredictor& model, const Plane& noisy, const SliceStack& condition, int t);

/// Convenience wrapper around PriorPredictor::predict.
Volume predict_prior(const PriorPredictor& model, const Volume& x);

/// Randomly initialised networks (initialisation is a function of config.seed).
std::shared_ptr<EpsPredictor> make_denoiser(const Denoiser25DConfig& config);
std::shared_ptr<PriorPredictor> make_prior(const Prior3DConfig& config);

/// Intra-op thread count of the tensor backend. Results are reproducible for a
/// fixed count.
void set_compute_threads(int threads);

/// Exact number of trainable parameters of the network described by a config.
std::size_t parameter_count(const Denoiser25DConfig& config);
std::size_t parameter_count(const Prior3DConfig& config);

// Checkpoint directory layout:
//   config.json     model config, schedule, context radius, normalization, view
//   weights.bin     raw weights (see nn.hpp for the blob layout)
//   ema.bin         exponential moving average of the weights
//   optimizer.bin   optimizer state for resuming
//   train_log.csv   step,loss,lr,wall_time_s
//   manifest.json   content hashes
inline constexpr const char* kCheckpointConfig = "config.json";
inline constexpr const char* kWeightsFile = "weights.bin";
inline constexpr const char* kEmaFile = "ema.bin";
inline constexpr const char* kOptimizerFile = "optimizer.bin";
inline constexpr const char* kTrainLogFile = "train_log.csv";

/// Which weights a checkpoint load should use.
enum class WeightSet { kEma, kRaw };

struct LoadedDenoiser {
  std::shared_ptr<EpsPredictor> model;
  Denoiser25DConfig config;
  NoiseSchedule schedule = NoiseSchedule::linear(2, 0.1, 0.2);
  ViewAxis view;
  nlohmann::json normalization;
};

struct LoadedPrior {
  std::shared_ptr<PriorPredictor> model;
  Prior3DConfig config;
  nlohmann::json normalization;
};

LoadedDenoiser load_denoiser(const std::filesystem::path& dir, WeightSet which = WeightSet::kEma);
LoadedPrior load_prior(const std::filesystem::path& dir, WeightSet which = WeightSet::kEma);

/// Per-view denoisers plus the prior, all trained against one schedule,
/// context radius and normalization.
struct ViewModelSet {
  std::map<ViewAxis, std::shared_ptr<const EpsPredictor>> views;
  std::shared_ptr<const PriorPredictor> prior;
  NoiseSchedule schedule = NoiseSchedule::linear(2, 0.1, 0.2);
  std::size_t context_radius = 0;
  nlohmann::json normalization;

  /// Throws ShapeError/RangeError/DependencyError on an inconsistent set.
  void validate() const;
  bool has(ViewAxis v) const { return views.count(v) > 0; }

  /// Assembles a set from checkpoint directories, checking consistency.
  static ViewModelSet load(const std::map<ViewAxis, std::filesystem::path>& view_dirs,
                           const std::filesystem::path& prior_dir);
};

}  // namespace madm
