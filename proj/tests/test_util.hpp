#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include "madm/volume.hpp"

namespace madm::test {

inline Volume random_volume(Dims d, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Volume v(d);
  for (auto& x : v.voxels()) x = u(rng);
  return v;
}

inline Volume gaussian_volume(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Volume v(d);
  for (auto& x : v.voxels()) x = n(rng);
  return v;
}

inline Volume ramp_volume(Dims d, int axis) {
  Volume v(d);
  for (std::size_t a = 0; a < d.d1; ++a)
    for (std::size_t b = 0; b < d.d2; ++b)
      for (std::size_t c = 0; c < d.d3; ++c)
        v(a, b, c) = static_cast<float>(axis == 0 ? a : axis == 1 ? b : c);
  return v;
}

inline double correlation(const Volume& a, const Volume& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.voxels()[i];
    mb += b.voxels()[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.voxels()[i] - ma, y = b.voxels()[i] - mb;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  return sab / std::sqrt(saa * sbb);
}

/// max_i |a_i - b_i| / max(|b_i|, 1e-3)
inline double max_rel_error(const Volume& a, const Volume& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ref = std::max(std::abs(static_cast<double>(b.voxels()[i])), 1e-3);
    worst = std::max(worst, std::abs(static_cast<double>(a.voxels()[i]) - b.voxels()[i]) / ref);
  }
  return worst;
}

/// ||a - b||_2 / ||b||_2
inline double rel_l2_error(const Volume& a, const Volume& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = static_cast<double>(a.voxels()[i]) - b.voxels()[i];
    num += e * e;
    den += static_cast<double>(b.voxels()[i]) * b.voxels()[i];
  }
  return std::sqrt(num / den);
}

inline double max_abs_error(const Volume& a, const Volume& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.voxels()[i]) - b.voxels()[i]));
  }
  return worst;
}

inline double max_abs(const Volume& a) {
  double m = 0.0;
  for (float v : a.voxels()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

inline bool bit_equal(const Volume& a, const Volume& b) {
  return a.dims() == b.dims() &&
         std::equal(a.voxels().begin(), a.voxels().end(), b.voxels().begin(),
                    [](float x, float y) { return std::memcmp(&x, &y, sizeof(float)) == 0; });
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("madm_" + tag + "_" + std::to_string(rng() % 1000000000ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace madm::test
