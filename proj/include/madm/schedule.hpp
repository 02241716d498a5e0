#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "madm/volume.hpp"

namespace madm {

inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Coefficients of one ancestral reverse step:
///   y_{t-1} = inv_sqrt_alpha * (y_t - eps_coef * eps_hat) + sigma * z
struct ReverseCoefficients {
  double inv_sqrt_alpha;
  double eps_coef;
  double sigma;
};

/// Precomputed beta/alpha/alpha-bar tables for timesteps 1..T. Timesteps are
/// 1-based; alpha_bar(0) is 1 by convention.
class NoiseSchedule {
 public:
  /// Linear betas from beta_start (t=1) to beta_end (t=T).
  static NoiseSchedule linear(int steps, double beta_start = kDefaultBetaStart,
                              double beta_end = kDefaultBetaEnd);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta_start() const noexcept { return betas_.front(); }
  double beta_end() const noexcept { return betas_.back(); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const;  // t in [0, T]

  /// Reverse-step noise scale. Fixed to sqrt(beta_t); the posterior variance
  /// beta_t (1 - abar_{t-1}) / (1 - abar_t) is the usual alternative.
  double sigma(int t) const;

  ReverseCoefficients reverse_coefficients(int t) const;

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alphas() const noexcept { return alphas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

  bool operator==(const NoiseSchedule& other) const = default;

 private:
  NoiseSchedule() = default;
  std::size_t index(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule make_linear_schedule(int steps, double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd);

/// out = sqrt(abar_t) * y0 + sqrt(1 - abar_t) * eps, elementwise. t in [1, T].
void diffuse(std::span<const float> y0, std::span<const float> eps, int t,
             const NoiseSchedule& schedule, std::span<float> out);
Volume diffuse(const Volume& y0, int t, const Volume& eps, const NoiseSchedule& schedule);

/// One ancestral step. An empty `z` stands for the zero volume (used at t = 1).
void reverse_step(std::span<const float> y_t, std::span<const float> eps_hat, int t,
                  std::span<const float> z, const NoiseSchedule& schedule, std::span<float> out);
Volume reverse_step(const Volume& y_t, const Volume& eps_hat, int t, const Volume& z,
                    const NoiseSchedule& schedule);
/// Variant with z = 0.
Volume reverse_step(const Volume& y_t, const Volume& eps_hat, int t, const NoiseSchedule& schedule);

}  // namespace madm
