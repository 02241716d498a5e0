#include "madm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "madm/error.hpp"
#include "madm/parallel.hpp"
#include "madm/rng.hpp"

namespace madm {

namespace fs = std::filesystem;

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

double uniform(Rng& rng, Range r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }
int uniform(Rng& rng, CountRange r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng); }

/// Uniformly random rotation from a unit quaternion.
Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double q[4];
  double norm = 0.0;
  for (auto& x : q) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : q) x /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;
  Mat3 rotation;

  /// Squared normalised radius of point p; <= 1 inside.
  double level(double a, double b, double c) const {
    const double d[3] = {a - center[0], b - center[1], c - center[2]};
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double u = rotation[0][k] * d[0] + rotation[1][k] * d[1] + rotation[2][k] * d[2];
      acc += (u / radii[k]) * (u / radii[k]);
    }
    return acc;
  }
};

void check_range(Range r, const char* name) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
    throw RangeError(std::string("phantom spec: empty range ") + name);
  }
}

nlohmann::json range_json(Range r) { return nlohmann::json::array({r.lo, r.hi}); }
nlohmann::json range_json(CountRange r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  return {j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()};
}

CountRange count_from(const nlohmann::json& j, const char* key, CountRange fallback) {
  if (!j.contains(key)) return fallback;
  return {j.at(key).at(0).get<int>(), j.at(key).at(1).get<int>()};
}

/// 1D squared distance transform along a line with spacing w (lower envelope
/// of parabolas).
void edt_line(const std::vector<double>& f, std::vector<double>& d, double w) {
  const std::size_t n = f.size();
  const double w2 = w * w;
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (std::isfinite(f[q])) {
      first = q;
      break;
    }
  }
  if (first == n) {
    std::fill(d.begin(), d.end(), std::numeric_limits<double>::infinity());
    return;
  }
  v[0] = first;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    double s = 0.0;
    while (true) {
      const double p = static_cast<double>(v[k]);
      const double qq = static_cast<double>(q);
      s = ((f[q] + w2 * qq * qq) - (f[v[k]] + w2 * p * p)) / (2.0 * w2 * (qq - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = w2 * diff * diff + f[v[k]];
  }
}

std::string sample_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03zu", index);
  return buf;
}

}  // namespace

void PhantomSpec::validate() const {
  if (size.count() == 0) throw RangeError("phantom spec: zero-sized volume");
  if (size.d1 > max_extent || size.d2 > max_extent || size.d3 > max_extent) {
    throw RangeError("phantom spec: extent exceeds " + std::to_string(max_extent));
  }
  if (organs.lo < 0 || organs.lo > organs.hi) throw RangeError("phantom spec: empty range organs");
  if (lesions.lo < 0 || lesions.lo > lesions.hi) throw RangeError("phantom spec: empty range lesions");
  check_range(body_radius_fraction, "body_radius_fraction");
  check_range(organ_radius_vox, "organ_radius_vox");
  check_range(lesion_radius_vox, "lesion_radius_vox");
  check_range(body_intensity, "body_intensity");
  check_range(organ_intensity, "organ_intensity");
  check_range(lesion_intensity, "lesion_intensity");
  if (body_radius_fraction.lo <= 0.0 || body_radius_fraction.hi > 0.5) {
    throw RangeError("phantom spec: body_radius_fraction must lie in (0, 0.5]");
  }
  if (lesion_radius_vox.lo <= 0.0 || organ_radius_vox.lo <= 0.0) {
    throw RangeError("phantom spec: radii must be positive");
  }
  if (smooth_sigma_vox < 0.0) throw RangeError("phantom spec: negative smoothing");
  for (double mm : voxel_mm) {
    if (!(mm > 0.0)) throw RangeError("phantom spec: voxel size must be positive");
  }
}

nlohmann::json PhantomSpec::to_json() const {
  return {{"size", {size.d1, size.d2, size.d3}},
          {"voxel_mm", voxel_mm},
          {"organs", range_json(organs)},
          {"lesions", range_json(lesions)},
          {"body_radius_fraction", range_json(body_radius_fraction)},
          {"organ_radius_vox", range_json(organ_radius_vox)},
          {"lesion_radius_vox", range_json(lesion_radius_vox)},
          {"body_intensity", range_json(body_intensity)},
          {"organ_intensity", range_json(organ_intensity)},
          {"lesion_intensity", range_json(lesion_intensity)},
          {"smooth_sigma_vox", smooth_sigma_vox},
          {"max_extent", max_extent},
          {"placement_retries", placement_retries}};
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  PhantomSpec s;
  if (j.contains("size")) {
    const auto& d = j.at("size");
    s.size = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
  }
  if (j.contains("voxel_mm")) s.voxel_mm = j.at("voxel_mm").get<std::array<double, 3>>();
  s.organs = count_from(j, "organs", s.organs);
  s.lesions = count_from(j, "lesions", s.lesions);
  s.body_radius_fraction = range_from(j, "body_radius_fraction", s.body_radius_fraction);
  s.organ_radius_vox = range_from(j, "organ_radius_vox", s.organ_radius_vox);
  s.lesion_radius_vox = range_from(j, "lesion_radius_vox", s.lesion_radius_vox);
  s.body_intensity = range_from(j, "body_intensity", s.body_intensity);
  s.organ_intensity = range_from(j, "organ_intensity", s.organ_intensity);
  s.lesion_intensity = range_from(j, "lesion_intensity", s.lesion_intensity);
  s.smooth_sigma_vox = j.value("smooth_sigma_vox", s.smooth_sigma_vox);
  s.max_extent = j.value("max_extent", s.max_extent);
  s.placement_retries = j.value("placement_retries", s.placement_retries);
  return s;
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed, {0x7068616eULL});
  const Dims d = spec.size;
  std::array<double, 3> mid{};
  for (std::size_t k = 0; k < 3; ++k) mid[k] = 0.5 * static_cast<double>(d[k] - 1);

  Ellipsoid body;
  for (std::size_t k = 0; k < 3; ++k) {
    body.radii[k] = uniform(rng, spec.body_radius_fraction) * static_cast<double>(d[k]);
    body.center[k] = mid[k] + std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  }
  body.rotation = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  Volume labels(d, 0.0f);
  Volume field(d, 0.0f);
  const float body_level = static_cast<float>(uniform(rng, spec.body_intensity));
  for (std::size_t a = 0; a < d.d1; ++a) {
    for (std::size_t b = 0; b < d.d2; ++b) {
      for (std::size_t c = 0; c < d.d3; ++c) {
        if (body.level(a, b, c) <= 1.0) {
          labels(a, b, c) = static_cast<float>(Tissue::kBody);
          field(a, b, c) = body_level;
        }
      }
    }
  }

  const int n_organs = uniform(rng, spec.organs);
  for (int o = 0; o < n_organs; ++o) {
    Ellipsoid organ;
    organ.rotation = random_rotation(rng);
    for (std::size_t k = 0; k < 3; ++k) organ.radii[k] = uniform(rng, spec.organ_radius_vox);
    // Centre uniformly inside the inner 60% of the body.
    for (int attempt = 0;; ++attempt) {
      for (std::size_t k = 0; k < 3; ++k) {
        organ.center[k] = body.center[k] + std::uniform_real_distribution<double>(-0.6, 0.6)(rng) *
                                               body.radii[k];
      }
      if (body.level(organ.center[0], organ.center[1], organ.center[2]) <= 0.36) break;
      if (attempt >= spec.placement_retries) {
        throw GenerationError("could not place organ " + std::to_string(o) + " after " +
                              std::to_string(attempt) + " attempts");
      }
    }
    const float level = static_cast<float>(uniform(rng, spec.organ_intensity));
    for (std::size_t a = 0; a < d.d1; ++a) {
      for (std::size_t b = 0; b < d.d2; ++b) {
        for (std::size_t c = 0; c < d.d3; ++c) {
          if (labels(a, b, c) != 0.0f && organ.level(a, b, c) <= 1.0) {
            labels(a, b, c) = static_cast<float>(Tissue::kOrgan);
            field(a, b, c) = level;
          }
        }
      }
    }
  }

  Phantom out;
  const int n_lesions = uniform(rng, spec.lesions);
  // Occupancy with a one-voxel guard band keeps lesion masks disjoint.
  std::vector<std::uint8_t> taken(d.count(), 0);
  for (int l = 0; l < n_lesions; ++l) {
    const double r = uniform(rng, spec.lesion_radius_vox);
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(r)) + 1;
    bool placed = false;
    for (int attempt = 0; attempt <= spec.placement_retries && !placed; ++attempt) {
      std::array<std::ptrdiff_t, 3> ctr{};
      for (std::size_t k = 0; k < 3; ++k) {
        ctr[k] = std::uniform_int_distribution<std::ptrdiff_t>(
            reach, static_cast<std::ptrdiff_t>(d[k]) - 1 - reach)(rng);
      }
      std::vector<std::size_t> voxels;
      bool ok = true;
      for (auto a = ctr[0] - reach; a <= ctr[0] + reach && ok; ++a) {
        for (auto b = ctr[1] - reach; b <= ctr[1] + reach && ok; ++b) {
          for (auto c = ctr[2] - reach; c <= ctr[2] + reach && ok; ++c) {
            const double dist2 = static_cast<double>((a - ctr[0]) * (a - ctr[0]) +
                                                     (b - ctr[1]) * (b - ctr[1]) +
                                                     (c - ctr[2]) * (c - ctr[2]));
            const auto at = labels.offset(a, b, c);
            if (dist2 <= (r + 1.0) * (r + 1.0) && taken[at]) ok = false;
            if (dist2 <= r * r) {
              if (labels.voxels()[at] == 0.0f) ok = false;
              voxels.push_back(at);
            }
          }
        }
      }
      // The lesion must also sit at least one voxel inside the body surface.
      if (ok && body.level(ctr[0], ctr[1], ctr[2]) > 0.7) ok = false;
      if (!ok || voxels.empty()) continue;
      const float level = static_cast<float>(uniform(rng, spec.lesion_intensity));
      Volume mask(d, 0.0f);
      for (auto at : voxels) {
        taken[at] = 1;
        mask.voxels()[at] = 1.0f;
        labels.voxels()[at] = static_cast<float>(Tissue::kLesion);
        field.voxels()[at] = level;
      }
      out.lesion_masks.push_back(std::move(mask));
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place lesion " + std::to_string(l) + " after " +
                            std::to_string(spec.placement_retries) + " attempts");
    }
  }

  if (spec.smooth_sigma_vox > 0.0) {
    const double s = spec.smooth_sigma_vox;
    const int r = static_cast<int>(std::ceil(3.0 * s));
    field = gaussian_filter(field, {s, s, s}, {r, r, r});
  }
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (labels.voxels()[i] == 0.0f) field.voxels()[i] = 0.0f;
  }
  field.meta() = {{"voxel_mm", spec.voxel_mm}, {"seed", seed}, {"kind", "target"}};
  out.target = std::move(field);
  out.labels = std::move(labels);
  return out;
}

nlohmann::json DegradeOptions::to_json() const {
  nlohmann::json gain = std::isinf(counts_gain) ? nlohmann::json("inf") : nlohmann::json(counts_gain);
  return {{"counts_gain", gain},
          {"attenuation_min", attenuation_min},
          {"attenuation_length_mm", attenuation_length_mm},
          {"psf_fwhm_mm", psf_fwhm_mm},
          {"voxel_mm", voxel_mm}};
}

DegradeOptions DegradeOptions::from_json(const nlohmann::json& j) {
  DegradeOptions o;
  if (j.contains("counts_gain")) {
    const auto& g = j.at("counts_gain");
    o.counts_gain = g.is_string() ? std::numeric_limits<double>::infinity() : g.get<double>();
  }
  o.attenuation_min = j.value("attenuation_min", o.attenuation_min);
  o.attenuation_length_mm = j.value("attenuation_length_mm", o.attenuation_length_mm);
  o.psf_fwhm_mm = j.value("psf_fwhm_mm", o.psf_fwhm_mm);
  if (j.contains("voxel_mm")) o.voxel_mm = j.at("voxel_mm").get<std::array<double, 3>>();
  return o;
}

Volume depth_from_surface(const Volume& body, std::array<double, 3> voxel_mm) {
  const Dims d = body.dims();
  const double inf = std::numeric_limits<double>::infinity();
  // Voxels outside the volume count as outside the body: pad by one voxel.
  const Dims p{d.d1 + 2, d.d2 + 2, d.d3 + 2};
  std::vector<double> f(p.count(), 0.0);
  auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return (a * p.d2 + b) * p.d3 + c; };
  for (std::size_t a = 0; a < d.d1; ++a) {
    for (std::size_t b = 0; b < d.d2; ++b) {
      for (std::size_t c = 0; c < d.d3; ++c) {
        if (body(a, b, c) > 0.0f) f[at(a + 1, b + 1, c + 1)] = inf;
      }
    }
  }
  std::vector<double> line;
  std::vector<double> out;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t n = p[axis];
    const std::size_t stride = axis == 0 ? p.d2 * p.d3 : axis == 1 ? p.d3 : 1;
    const std::size_t outer = axis == 0 ? 1 : p.d1;
    const std::size_t mid = axis == 1 ? 1 : p.d2;
    const std::size_t inner = axis == 2 ? 1 : p.d3;
    line.resize(n);
    out.resize(n);
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < mid; ++b) {
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t base = (a * p.d2 + b) * p.d3 + c;
          for (std::size_t i = 0; i < n; ++i) line[i] = f[base + i * stride];
          edt_line(line, out, voxel_mm[axis]);
          for (std::size_t i = 0; i < n; ++i) f[base + i * stride] = out[i];
        }
      }
    }
  }
  Volume depth(d, 0.0f);
  for (std::size_t a = 0; a < d.d1; ++a) {
    for (std::size_t b = 0; b < d.d2; ++b) {
      for (std::size_t c = 0; c < d.d3; ++c) {
        depth(a, b, c) = static_cast<float>(std::sqrt(f[at(a + 1, b + 1, c + 1)]));
      }
    }
  }
  return depth;
}

Volume attenuation_field(const Volume& target, const DegradeOptions& options) {
  if (!(options.attenuation_min > 0.0 && options.attenuation_min <= 1.0)) {
    throw RangeError("attenuation_min must lie in (0, 1]");
  }
  if (!(options.attenuation_length_mm > 0.0)) throw RangeError("attenuation length must be positive");
  Volume body(target.dims(), 0.0f);
  for (std::size_t i = 0; i < target.size(); ++i) {
    body.voxels()[i] = target.voxels()[i] > 0.0f ? 1.0f : 0.0f;
  }
  Volume a = depth_from_surface(body, options.voxel_mm);
  const double amin = options.attenuation_min;
  for (auto& v : a.voxels()) {
    v = static_cast<float>(amin + (1.0 - amin) * std::exp(-v / options.attenuation_length_mm));
  }
  return a;
}

Volume degrade(const Volume& target, double dose_fraction, std::uint64_t seed,
               const DegradeOptions& options) {
  if (!(dose_fraction > 0.0 && dose_fraction <= 1.0)) {
    throw RangeError("dose_fraction must lie in (0, 1]");
  }
  if (!(options.counts_gain > 0.0)) throw RangeError("counts_gain must be positive");
  Volume out = target;
  if (options.attenuation_min < 1.0) {
    const Volume a = attenuation_field(target, options);
    for (std::size_t i = 0; i < out.size(); ++i) out.voxels()[i] *= a.voxels()[i];
  }
  if (std::isfinite(options.counts_gain)) {
    Rng rng = make_rng(seed, {0x6e6f697365ULL});
    const double scale = dose_fraction * options.counts_gain;
    for (auto& v : out.voxels()) {
      const double mean = scale * std::max(0.0f, v);
      const auto counts = mean > 0.0 ? std::poisson_distribution<long>(mean)(rng) : 0L;
      v = static_cast<float>(static_cast<double>(counts) / scale);
    }
  }
  if (options.psf_fwhm_mm > 0.0) {
    std::array<double, 3> sigma{};
    std::array<int, 3> radius{};
    for (std::size_t k = 0; k < 3; ++k) {
      sigma[k] = options.psf_fwhm_mm / (2.0 * std::sqrt(2.0 * std::numbers::ln2)) / options.voxel_mm[k];
      radius[k] = std::max(1, static_cast<int>(std::ceil(3.0 * sigma[k])));
    }
    out = gaussian_filter(out, sigma, radius);
  }
  out.meta() = {{"voxel_mm", options.voxel_mm},
                {"seed", seed},
                {"dose_fraction", dose_fraction},
                {"kind", "input"}};
  return out;
}

nlohmann::json DatasetSpec::to_json() const {
  return {{"phantom", phantom.to_json()},
          {"degrade", degrade.to_json()},
          {"n_train", n_train},
          {"n_test", n_test},
          {"dose_fractions", dose_fractions},
          {"master_seed", master_seed},
          {"normalization_quantile", normalization_quantile}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  if (j.contains("phantom")) s.phantom = PhantomSpec::from_json(j.at("phantom"));
  if (j.contains("degrade")) s.degrade = DegradeOptions::from_json(j.at("degrade"));
  s.n_train = j.value("n_train", s.n_train);
  s.n_test = j.value("n_test", s.n_test);
  if (j.contains("dose_fractions")) s.dose_fractions = j.at("dose_fractions").get<std::vector<double>>();
  s.master_seed = j.value("master_seed", s.master_seed);
  s.normalization_quantile = j.value("normalization_quantile", s.normalization_quantile);
  return s;
}

std::uint64_t sample_seed(std::uint64_t master_seed, int split, std::size_t index) {
  return derive_seed(master_seed, {0x64617461ULL, static_cast<std::uint64_t>(split), index});
}

Manifest build_dataset(const DatasetSpec& spec, const fs::path& out_dir, bool overwrite,
                       const nlohmann::json& provenance) {
  spec.phantom.validate();
  if (spec.dose_fractions.empty()) throw RangeError("dataset needs at least one dose fraction");
  for (double f : spec.dose_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw RangeError("dose fractions must lie in (0, 1]");
  }
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!overwrite) {
      throw IoError("dataset directory " + out_dir.string() + " exists; pass overwrite to replace it");
    }
    fs::remove_all(out_dir);
  }
  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "test");

  struct Job {
    std::string split;
    int split_code;
    std::size_t index;
    std::uint64_t seed;
    double dose;
  };
  std::vector<Job> jobs;
  std::set<std::uint64_t> train_seeds;
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    const auto s = sample_seed(spec.master_seed, 0, i);
    train_seeds.insert(s);
    jobs.push_back({"train", 0, i, s, spec.dose_fractions[i % spec.dose_fractions.size()]});
  }
  for (std::size_t i = 0; i < spec.n_test; ++i) {
    const auto s = sample_seed(spec.master_seed, 1, i);
    if (train_seeds.count(s)) throw GenerationError("train/test seed collision");
    jobs.push_back({"test", 1, i, s, spec.dose_fractions[i % spec.dose_fractions.size()]});
  }

  DegradeOptions degrade_opts = spec.degrade;
  degrade_opts.voxel_mm = spec.phantom.voxel_mm;

  std::vector<nlohmann::json> records(jobs.size());
  std::vector<std::vector<float>> train_voxels(spec.n_train);
  parallel_for(jobs.size(), spec.workers, [&](std::size_t j) {
    const auto& job = jobs[j];
    Phantom ph = generate_phantom(spec.phantom, job.seed);
    Volume input = degrade(ph.target, job.dose, job.seed, degrade_opts);
    const std::string stem = job.split + "/" + sample_name(job.index);
    write_volume(ph.target, out_dir / (stem + "_target.madmvol"));
    write_volume(input, out_dir / (stem + "_input.madmvol"));
    nlohmann::json lesions = nlohmann::json::array();
    for (std::size_t k = 0; k < ph.lesion_masks.size(); ++k) {
      const std::string name = stem + "_lesion_" + std::to_string(k) + ".madmvol";
      write_volume(ph.lesion_masks[k], out_dir / name);
      lesions.push_back(name);
    }
    records[j] = {{"id", job.split + "_" + sample_name(job.index)},
                  {"split", job.split},
                  {"index", job.index},
                  {"seed", job.seed},
                  {"dose_fraction", job.dose},
                  {"input", stem + "_input.madmvol"},
                  {"target", stem + "_target.madmvol"},
                  {"lesions", lesions}};
    if (job.split_code == 0) {
      train_voxels[job.index].assign(ph.target.voxels().begin(), ph.target.voxels().end());
    }
  });

  std::vector<float> pooled;
  for (auto& v : train_voxels) pooled.insert(pooled.end(), v.begin(), v.end());
  const double hi = pooled.empty() ? 1.0 : quantile(pooled, spec.normalization_quantile);

  std::vector<std::string> files;
  for (const auto& r : records) {
    files.push_back(r.at("input").get<std::string>());
    files.push_back(r.at("target").get<std::string>());
    for (const auto& l : r.at("lesions")) files.push_back(l.get<std::string>());
  }
  nlohmann::json created = provenance.is_object() ? provenance : nlohmann::json::object();
  created["master_seed"] = spec.master_seed;
  created["spec_hash"] = json_hash(spec.to_json());
  nlohmann::json payload = {{"spec", spec.to_json()},
                            {"normalization", {{"lo", 0.0}, {"hi", hi}}},
                            {"samples", records}};
  return write_manifest(out_dir, "dataset", files, created, payload);
}

Dataset Dataset::open(const fs::path& root) {
  Dataset ds;
  ds.root = root;
  ds.manifest = load_manifest(root);
  if (ds.manifest.kind != "dataset") {
    throw FormatError(FormatError::Kind::kInvalid, root.string() + " is not a dataset manifest");
  }
  const auto& norm = ds.manifest.payload.at("normalization");
  ds.norm_lo = norm.at("lo").get<double>();
  ds.norm_hi = norm.at("hi").get<double>();
  return ds;
}

std::size_t Dataset::count(const std::string& split) const {
  std::size_t n = 0;
  for (const auto& s : manifest.payload.at("samples")) n += s.at("split") == split ? 1 : 0;
  return n;
}

std::vector<SamplePair> Dataset::load(const std::string& split, bool normalized,
                                      std::size_t limit) const {
  std::vector<SamplePair> out;
  for (const auto& s : manifest.payload.at("samples")) {
    if (s.at("split") != split) continue;
    if (out.size() >= limit) break;
    SamplePair p;
    p.id = s.at("id").get<std::string>();
    p.split = split;
    p.seed = s.at("seed").get<std::uint64_t>();
    p.dose_fraction = s.at("dose_fraction").get<double>();
    p.input = read_volume(root / s.at("input").get<std::string>());
    p.target = read_volume(root / s.at("target").get<std::string>());
    if (normalized) {
      p.input = normalize(p.input, norm_lo, norm_hi);
      p.target = normalize(p.target, norm_lo, norm_hi);
    }
    for (const auto& l : s.at("lesions")) p.lesion_masks.push_back(read_volume(root / l.get<std::string>()));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace madm
