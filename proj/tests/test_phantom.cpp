#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "madm/error.hpp"
#include "madm/phantom.hpp"
#include "test_util.hpp"

using namespace madm;

namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.size = {32, 32, 32};
  s.organ_radius_vox = {2.5, 5.0};
  return s;
}

double mean_over(const Volume& v, const Volume& labels, Tissue tissue) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (labels.voxels()[i] == static_cast<float>(tissue)) {
      sum += v.voxels()[i];
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TEST_CASE("phantom generation is deterministic") {
  const auto spec = small_spec();
  const Phantom a = generate_phantom(spec, 42);
  const Phantom b = generate_phantom(spec, 42);
  CHECK(test::bit_equal(a.target, b.target));
  REQUIRE(a.lesion_masks.size() == b.lesion_masks.size());
  for (std::size_t k = 0; k < a.lesion_masks.size(); ++k) CHECK(test::bit_equal(a.lesion_masks[k], b.lesion_masks[k]));
  const Phantom c = generate_phantom(spec, 43);
  CHECK_FALSE(test::bit_equal(a.target, c.target));
}

TEST_CASE("phantom structure: zero background, disjoint non-empty lesions") {
  const auto spec = small_spec();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Phantom p = generate_phantom(spec, seed);
    CHECK(p.target.dims() == spec.size);
    CHECK(p.lesion_masks.size() >= 1);
    CHECK(p.lesion_masks.size() <= 3);
    for (std::size_t i = 0; i < p.target.size(); ++i) {
      CHECK(p.target.voxels()[i] >= 0.0f);
      if (p.labels.voxels()[i] == 0.0f) CHECK(p.target.voxels()[i] == 0.0f);
    }
    std::vector<int> owner(p.target.size(), -1);
    for (std::size_t k = 0; k < p.lesion_masks.size(); ++k) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < p.target.size(); ++i) {
        if (p.lesion_masks[k].voxels()[i] != 0.0f) {
          CHECK(owner[i] == -1);
          owner[i] = static_cast<int>(k);
          ++count;
        }
      }
      CHECK(count > 0);
    }
    // Lesions are hotter than organs by construction of the intensity ranges.
    CHECK(mean_over(p.target, p.labels, Tissue::kLesion) > mean_over(p.target, p.labels, Tissue::kOrgan));
  }
}

TEST_CASE("lesion-free phantoms and infeasible specs") {
  auto spec = small_spec();
  spec.lesions = {0, 0};
  CHECK(generate_phantom(spec, 1).lesion_masks.empty());

  auto crowded = small_spec();
  crowded.lesions = {40, 40};
  crowded.lesion_radius_vox = {5.0, 5.0};
  crowded.placement_retries = 20;
  CHECK_THROWS_AS(generate_phantom(crowded, 1), GenerationError);

  auto big = small_spec();
  big.size = {129, 8, 8};
  CHECK_THROWS_AS(generate_phantom(big, 1), RangeError);
  auto empty = small_spec();
  empty.organ_intensity = {3.0, 2.0};
  CHECK_THROWS_AS(generate_phantom(empty, 1), RangeError);
}

TEST_CASE("depth transform matches brute force") {
  const Dims d{9, 10, 11};
  Volume body(d, 0.0f);
  for (std::size_t a = 1; a < 8; ++a)
    for (std::size_t b = 2; b < 9; ++b)
      for (std::size_t c = 1; c < 11; ++c)
        if ((a - 4.0) * (a - 4.0) + (b - 5.0) * (b - 5.0) < 12.0 || c < 4) body(a, b, c) = 1.0f;
  const std::array<double, 3> mm{2.0, 3.0, 4.0};
  const Volume depth = depth_from_surface(body, mm);
  for (long a = 0; a < 9; ++a)
    for (long b = 0; b < 10; ++b)
      for (long c = 0; c < 11; ++c) {
        double best = 0.0;
        if (body(a, b, c) > 0.0f) {
          best = std::numeric_limits<double>::infinity();
          for (long i = -1; i <= 9; ++i)
            for (long j = -1; j <= 10; ++j)
              for (long k = -1; k <= 11; ++k) {
                const bool outside = i < 0 || j < 0 || k < 0 || i >= 9 || j >= 10 || k >= 11 ||
                                     body(i, j, k) == 0.0f;
                if (!outside) continue;
                const double dist = std::hypot(mm[0] * (i - a), mm[1] * (j - b), mm[2] * (k - c));
                best = std::min(best, dist);
              }
        }
        CHECK(depth(a, b, c) == doctest::Approx(best).epsilon(1e-6));
      }
}

TEST_CASE("degrade degenerate settings reproduce the target") {
  const Phantom p = generate_phantom(small_spec(), 3);
  DegradeOptions o;
  o.counts_gain = std::numeric_limits<double>::infinity();
  o.attenuation_min = 1.0;
  o.psf_fwhm_mm = 0.0;
  const Volume x = degrade(p.target, 1.0, 5, o);
  CHECK(test::bit_equal(x, p.target));
  CHECK_THROWS_AS(degrade(p.target, 0.0, 5, o), RangeError);
  CHECK_THROWS_AS(degrade(p.target, 1.5, 5, o), RangeError);
}

TEST_CASE("degrade: non-negative, bounded attenuation, depth bias") {
  const Phantom p = generate_phantom(small_spec(), 8);
  const DegradeOptions o;
  const Volume a = attenuation_field(p.target, o);
  const Volume depth = depth_from_surface(p.labels, o.voxel_mm);
  for (float v : a.voxels()) {
    CHECK(v >= 0.3f - 1e-6f);
    CHECK(v <= 1.0f);
  }
  const Volume x = degrade(p.target, 0.05, 9, o);
  for (float v : x.voxels()) CHECK(v >= 0.0f);

  // Noise-free degradation isolates the attenuation bias.
  DegradeOptions clean = o;
  clean.counts_gain = std::numeric_limits<double>::infinity();
  const Volume xc = degrade(p.target, 1.0, 9, clean);
  double deep_in = 0, deep_t = 0, surf_in = 0, surf_t = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float dmm = depth.voxels()[i];
    if (dmm > 24.0f) {
      deep_in += xc.voxels()[i];
      deep_t += p.target.voxels()[i];
    } else if (dmm > 0.0f && dmm <= 8.0f) {
      surf_in += xc.voxels()[i];
      surf_t += p.target.voxels()[i];
    }
  }
  REQUIRE(deep_t > 0.0);
  CHECK(deep_in / deep_t < surf_in / surf_t);
}

TEST_CASE("lower dose gives noisier inputs") {
  const Phantom p = generate_phantom(small_spec(), 12);
  DegradeOptions o;
  o.psf_fwhm_mm = 0.0;
  o.attenuation_min = 1.0;
  auto rel_noise = [&](double dose) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Volume x = degrade(p.target, dose, 1000 + seed, o);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = p.target.voxels()[i];
        if (t > 0.0) {
          acc += std::abs(x.voxels()[i] - t) / t;
          ++n;
        }
      }
    }
    return acc / static_cast<double>(n);
  };
  CHECK(rel_noise(0.05) > rel_noise(0.10));
}

TEST_CASE("dataset build is reproducible and well formed") {
  test::TempDir dir("dataset");
  DatasetSpec spec;
  spec.phantom = small_spec();
  spec.phantom.size = {16, 16, 16};
  spec.phantom.organ_radius_vox = {1.5, 3.0};
  spec.phantom.lesion_radius_vox = {1.0, 1.5};
  spec.n_train = 4;
  spec.n_test = 3;
  spec.master_seed = 77;
  const auto m = build_dataset(spec, dir / "a");
  build_dataset(spec, dir / "b");
  CHECK(m.payload["samples"].size() == 7);
  CHECK_THROWS_AS(build_dataset(spec, dir / "a"), IoError);
  CHECK_NOTHROW(build_dataset(spec, dir / "a", true));

  const auto mb = load_manifest(dir / "b");
  CHECK(mb.files == m.files);  // identical content hashes, identical bytes

  std::set<std::uint64_t> train, test_seeds;
  for (const auto& s : m.payload["samples"]) {
    (s["split"] == "train" ? train : test_seeds).insert(s["seed"].get<std::uint64_t>());
  }
  CHECK(train.size() == 4);
  CHECK(test_seeds.size() == 3);
  for (auto s : test_seeds) CHECK(train.count(s) == 0);

  const Dataset ds = Dataset::open(dir / "a");
  CHECK(ds.count("train") == 4);
  CHECK(ds.norm_hi > 0.0);
  const auto pairs = ds.load("test");
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].dose_fraction == 0.05);
  CHECK(pairs[1].dose_fraction == 0.10);
  CHECK(pairs[0].input.dims() == pairs[0].target.dims());
  CHECK(std::filesystem::exists(dir / "a/train/000_input.madmvol"));
  CHECK(std::filesystem::exists(dir / "a/test/002_target.madmvol"));
  for (float v : pairs[0].target.voxels()) CHECK(v >= -1.0f);
}
