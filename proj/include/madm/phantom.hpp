#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "madm/store.hpp"
#include "madm/volume.hpp"

namespace madm {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CountRange {
  int lo = 0;
  int hi = 0;
};

/// Geometry and intensity ranges of the synthetic body phantoms.
struct PhantomSpec {
  Dims size{48, 48, 48};
  std::array<double, 3> voxel_mm{4.0, 4.0, 4.0};
  CountRange organs{3, 6};
  CountRange lesions{1, 3};
  Range body_radius_fraction{0.36, 0.46};  // ellipsoid semi-axis / extent
  Range organ_radius_vox{3.0, 9.0};
  Range lesion_radius_vox{1.5, 3.0};
  Range body_intensity{0.8, 1.2};
  Range organ_intensity{1.5, 3.5};
  Range lesion_intensity{6.0, 10.0};
  double smooth_sigma_vox = 0.8;
  std::size_t max_extent = 128;
  int placement_retries = 200;

  /// Throws RangeError on empty ranges or oversize geometry.
  void validate() const;
  nlohmann::json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
};

/// Voxel labels of a generated phantom.
enum class Tissue : std::uint8_t { kAir = 0, kBody = 1, kOrgan = 2, kLesion = 3 };

struct Phantom {
  Volume target;
  std::vector<Volume> lesion_masks;  // binary, pairwise disjoint, non-empty
  Volume labels;                     // Tissue codes as floats
};

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Parameters of the low-count, non-attenuation-corrected degradation.
struct DegradeOptions {
  /// Expected counts per unit intensity at dose fraction 1. Infinity disables
  /// Poisson sampling (noise-free limit).
  double counts_gain = 50.0;
  double attenuation_min = 0.3;  // a_min; 1 disables attenuation
  double attenuation_length_mm = 40.0;
  double psf_fwhm_mm = 5.0;  // 0 disables blur
  std::array<double, 3> voxel_mm{4.0, 4.0, 4.0};

  nlohmann::json to_json() const;
  static DegradeOptions from_json(const nlohmann::json& j);
};

/// Distance (mm) from every voxel to the nearest voxel outside `body`
/// (exact Euclidean distance transform). Zero outside the body.
Volume depth_from_surface(const Volume& body, std::array<double, 3> voxel_mm);

/// Multiplicative attenuation in [a_min, 1], decreasing with depth.
Volume attenuation_field(const Volume& target, const DegradeOptions& options);

/// blur(Poisson(dose * gain * target * A) / (dose * gain)).
Volume degrade(const Volume& target, double dose_fraction, std::uint64_t seed,
               const DegradeOptions& options = {});

struct SamplePair {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;
  double dose_fraction = 1.0;
  Volume input;
  Volume target;
  std::vector<Volume> lesion_masks;
};

struct DatasetSpec {
  PhantomSpec phantom;
  DegradeOptions degrade;
  std::size_t n_train = 40;
  std::size_t n_test = 10;
  std::vector<double> dose_fractions{0.05, 0.10};
  std::uint64_t master_seed = 0;
  double normalization_quantile = 0.995;
  std::size_t workers = 1;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

/// Per-sample seed of sample `index` in split "train" (0) or "test" (1).
std::uint64_t sample_seed(std::uint64_t master_seed, int split, std::size_t index);

/// Writes train/ and test/ volumes plus manifest.json into `out_dir`.
/// Sample k receives dose_fractions[k % n]. Refuses to touch an existing
/// non-empty directory unless `overwrite` is set.
Manifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                       bool overwrite = false, const nlohmann::json& provenance = {});

/// A verified dataset directory.
struct Dataset {
  std::filesystem::path root;
  Manifest manifest;
  double norm_lo = 0.0;
  double norm_hi = 1.0;

  static Dataset open(const std::filesystem::path& root);

  std::size_t count(const std::string& split) const;
  /// Loads one split. Input and target share the dataset's normalisation when
  /// `normalized` is set; lesion masks are always raw binary volumes.
  std::vector<SamplePair> load(const std::string& split, bool normalized = true,
                               std::size_t limit = std::numeric_limits<std::size_t>::max()) const;
};

}  // namespace madm
