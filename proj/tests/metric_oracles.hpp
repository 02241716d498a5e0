#pragma once

// Straightforward reference implementations used to cross-check the library
// metrics. They favour directness over speed.

#include <algorithm>
#include <cmath>
#include <vector>

#include "madm/volume.hpp"

namespace madm::oracle {

inline double rmse(const Volume& p, const Volume& r) {
  long double acc = 0;
  for (std::size_t a = 0; a < p.dims().d1; ++a)
    for (std::size_t b = 0; b < p.dims().d2; ++b)
      for (std::size_t c = 0; c < p.dims().d3; ++c) {
        const long double e = static_cast<long double>(p(a, b, c)) - r(a, b, c);
        acc += e * e;
      }
  return std::sqrt(static_cast<double>(acc / p.size()));
}

inline double nmse(const Volume& p, const Volume& r) {
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double e = static_cast<long double>(p.voxels()[i]) - r.voxels()[i];
    num += e * e;
    den += static_cast<long double>(r.voxels()[i]) * r.voxels()[i];
  }
  return static_cast<double>(num / den);
}

inline double psnr(const Volume& p, const Volume& r) {
  float mx = r.voxels()[0];
  for (float v : r.voxels()) mx = std::max(mx, v);
  const double e = oracle::rmse(p, r);
  return 10.0 * std::log10(static_cast<double>(mx) * mx / (e * e));
}

/// Local statistics from an explicit 3D window: Gaussian weights truncated at
/// the radius and at the volume border, renormalised over the valid voxels,
/// with variances taken as weighted second central moments.
inline double ssim(const Volume& x, const Volume& y, double range, double sigma = 1.5, int radius = 5,
                   double k1 = 0.01, double k2 = 0.03) {
  const auto& d = x.dims();
  const double c1 = (k1 * range) * (k1 * range);
  const double c2 = (k2 * range) * (k2 * range);
  const auto g = [&](int o) { return std::exp(-0.5 * o * o / (sigma * sigma)); };
  const auto in = [](long i, std::size_t n) { return i >= 0 && i < static_cast<long>(n); };
  long double total = 0;
  for (long a = 0; a < static_cast<long>(d.d1); ++a)
    for (long b = 0; b < static_cast<long>(d.d2); ++b)
      for (long c = 0; c < static_cast<long>(d.d3); ++c) {
        long double wsum = 0, mx = 0, my = 0;
        for (int i = -radius; i <= radius; ++i)
          for (int j = -radius; j <= radius; ++j)
            for (int k = -radius; k <= radius; ++k) {
              if (!in(a + i, d.d1) || !in(b + j, d.d2) || !in(c + k, d.d3)) continue;
              const long double w = g(i) * g(j) * g(k);
              wsum += w;
              mx += w * x(a + i, b + j, c + k);
              my += w * y(a + i, b + j, c + k);
            }
        mx /= wsum;
        my /= wsum;
        long double vx = 0, vy = 0, cxy = 0;
        for (int i = -radius; i <= radius; ++i)
          for (int j = -radius; j <= radius; ++j)
            for (int k = -radius; k <= radius; ++k) {
              if (!in(a + i, d.d1) || !in(b + j, d.d2) || !in(c + k, d.d3)) continue;
              const long double w = g(i) * g(j) * g(k) / wsum;
              const long double dx = x(a + i, b + j, c + k) - mx;
              const long double dy = y(a + i, b + j, c + k) - my;
              vx += w * dx * dx;
              vy += w * dy * dy;
              cxy += w * dx * dy;
            }
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return static_cast<double>(total / x.size());
}

inline double masked_mean_error(const Volume& p, const Volume& r, const Volume& mask) {
  long double sp = 0, sr = 0;
  long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.voxels()[i] != 0.0f) {
      sp += p.voxels()[i];
      sr += r.voxels()[i];
      ++n;
    }
  }
  return static_cast<double>(std::fabs(sp / n - sr / n));
}

}  // namespace madm::oracle
