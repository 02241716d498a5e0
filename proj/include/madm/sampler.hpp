#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "madm/models.hpp"
#include "madm/volume.hpp"

namespace madm {

enum class SamplerMode { kAveraging, kSequential };

std::string_view to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(std::string_view name);

struct SamplerConfig {
  int t_s = 40;  // starting timestep; 0 returns the prior estimate
  std::vector<ViewAxis> views{ViewAxis::kCoronal, ViewAxis::kSagittal, ViewAxis::kAxial};
  SamplerMode mode = SamplerMode::kAveraging;
  /// Sequential mode: view used at t_s, t_s - 1, ... cyclically. Empty means `views`.
  std::vector<ViewAxis> order;
  std::uint64_t seed = 0;
  /// When false the chain starts from pure noise at t = T (t_s must equal T).
  bool use_prior = true;
  std::size_t slice_batch = 16;
  std::size_t workers = 1;

  /// Throws ConfigError naming the offending field.
  void validate(int steps) const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);

  const std::vector<ViewAxis>& sequence() const { return order.empty() ? views : order; }
};

/// Source of the Gaussian volumes a chain consumes: the prior-level noise and
/// one z per timestep t >= 2.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  /// Noise added to the prior (or the pure-noise start).
  virtual void start_noise(std::span<float> out) = 0;
  /// The shared z of timestep t.
  virtual void step_noise(int t, std::span<float> out) = 0;
};

/// Standard normal streams keyed by (seed, role, t), so any timestep's draw is
/// reproducible on its own.
class SeededNoise : public NoiseSource {
 public:
  explicit SeededNoise(std::uint64_t seed) : seed_(seed) {}
  void start_noise(std::span<float> out) override;
  void step_noise(int t, std::span<float> out) override;

 private:
  std::uint64_t seed_;
};

/// Multi-view averaging sampler (mode kAveraging) or the sequential variant
/// (mode kSequential). `x` is the normalised degraded volume; the result is
/// denormalised with x's normalisation metadata, or the model set's when x
/// carries none.
Volume madm_sample(const Volume& x, const ViewModelSet& models, const SamplerConfig& config);
Volume madm_sample(const Volume& x, const ViewModelSet& models, const SamplerConfig& config, NoiseSource& noise);

/// madm_sample with config.mode forced to kSequential.
Volume mvsd_sample(const Volume& x, const ViewModelSet& models, const SamplerConfig& config);

/// Seed used for one input of a batch: a function of the master seed and the
/// input's content, so permuting inputs permutes outputs.
std::uint64_t input_seed(std::uint64_t master, const Volume& x);

std::vector<Volume> sample_batch(const std::vector<Volume>& inputs, const ViewModelSet& models,
                                 const SamplerConfig& config);

}  // namespace madm
