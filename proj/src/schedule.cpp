#include "madm/schedule.hpp"

#include <cmath>
#include <string>

#include "madm/error.hpp"

namespace madm {

namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw RangeError("schedule needs at least 2 steps");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw RangeError("schedule endpoints must satisfy 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.betas_.resize(steps);
  s.alphas_.resize(steps);
  s.alpha_bars_.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas_[i] = 1.0 - s.betas_[i];
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
    if (i > 0 && !(s.betas_[i] > s.betas_[i - 1])) {
      throw RangeError("schedule betas are not strictly increasing at float precision");
    }
  }
  if (!(running > 0.0)) throw RangeError("alpha_bar underflows to zero; shorten the schedule");
  return s;
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule::linear(steps, beta_start, beta_end);
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) +
                     "]");
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[index(t)]; }

double NoiseSchedule::sigma(int t) const { return std::sqrt(beta(t)); }

ReverseCoefficients NoiseSchedule::reverse_coefficients(int t) const {
  const double a = alpha(t);
  return {1.0 / std::sqrt(a), (1.0 - a) / std::sqrt(1.0 - alpha_bar(t)), sigma(t)};
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"T", steps()}, {"beta_start", beta_start()}, {"beta_end", beta_end()}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  return linear(j.at("T").get<int>(), j.value("beta_start", kDefaultBetaStart),
                j.value("beta_end", kDefaultBetaEnd));
}

void diffuse(std::span<const float> y0, std::span<const float> eps, int t,
             const NoiseSchedule& schedule, std::span<float> out) {
  check_same(y0.size(), eps.size(), "diffuse");
  check_same(y0.size(), out.size(), "diffuse");
  if (t < 1) throw RangeError("diffuse: timestep must be >= 1");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < y0.size(); ++i) {
    out[i] = static_cast<float>(a * y0[i] + b * eps[i]);
  }
}

Volume diffuse(const Volume& y0, int t, const Volume& eps, const NoiseSchedule& schedule) {
  if (y0.dims() != eps.dims()) throw ShapeError("diffuse: y0 and eps dims differ");
  Volume out(y0.dims());
  out.meta() = y0.meta();
  diffuse(y0.voxels(), eps.voxels(), t, schedule, out.voxels());
  return out;
}

void reverse_step(std::span<const float> y_t, std::span<const float> eps_hat, int t,
                  std::span<const float> z, const NoiseSchedule& schedule, std::span<float> out) {
  check_same(y_t.size(), eps_hat.size(), "reverse_step");
  check_same(y_t.size(), out.size(), "reverse_step");
  if (!z.empty()) check_same(y_t.size(), z.size(), "reverse_step");
  const auto c = schedule.reverse_coefficients(t);
  if (z.empty()) {
    for (std::size_t i = 0; i < y_t.size(); ++i) {
      out[i] = static_cast<float>(c.inv_sqrt_alpha * (y_t[i] - c.eps_coef * eps_hat[i]));
    }
  } else {
    for (std::size_t i = 0; i < y_t.size(); ++i) {
      out[i] = static_cast<float>(c.inv_sqrt_alpha * (y_t[i] - c.eps_coef * eps_hat[i]) +
                                  c.sigma * z[i]);
    }
  }
}

Volume reverse_step(const Volume& y_t, const Volume& eps_hat, int t, const Volume& z,
                    const NoiseSchedule& schedule) {
  if (y_t.dims() != eps_hat.dims() || y_t.dims() != z.dims()) {
    throw ShapeError("reverse_step: dims differ");
  }
  Volume out(y_t.dims());
  out.meta() = y_t.meta();
  reverse_step(y_t.voxels(), eps_hat.voxels(), t, z.voxels(), schedule, out.voxels());
  return out;
}

Volume reverse_step(const Volume& y_t, const Volume& eps_hat, int t, const NoiseSchedule& schedule) {
  if (y_t.dims() != eps_hat.dims()) throw ShapeError("reverse_step: dims differ");
  Volume out(y_t.dims());
  out.meta() = y_t.meta();
  reverse_step(y_t.voxels(), eps_hat.voxels(), t, {}, schedule, out.voxels());
  return out;
}

}  // namespace madm
