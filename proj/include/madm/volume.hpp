#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace madm {

/// Extents of a volume, d1 outermost in memory.
struct Dims {
  std::size_t d1 = 0;
  std::size_t d2 = 0;
  std::size_t d3 = 0;

  std::size_t count() const noexcept { return d1 * d2 * d3; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? d1 : axis == 1 ? d2 : d3; }
  bool operator==(const Dims&) const = default;
};

/// Slicing direction. Coronal cuts dim 1, sagittal dim 2, axial dim 3.
enum class ViewAxis { kCoronal = 0, kSagittal = 1, kAxial = 2 };

inline constexpr std::array<ViewAxis, 3> kAllViews = {ViewAxis::kCoronal, ViewAxis::kSagittal,
                                                     ViewAxis::kAxial};

std::string_view to_string(ViewAxis axis);
ViewAxis parse_view_axis(std::string_view name);

inline std::size_t axis_index(ViewAxis axis) { return static_cast<std::size_t>(axis); }

/// A 2D cross-section, row-major.
struct Plane {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Plane() = default;
  Plane(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), values(r * c, fill) {}

  std::size_t size() const noexcept { return values.size(); }
  float& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const Plane&) const = default;
};

/// (2s+1) adjacent cross-sections centred on `center`, used as 2.5D condition.
struct SliceStack {
  ViewAxis axis = ViewAxis::kCoronal;
  std::size_t center = 0;
  std::size_t radius = 0;
  std::vector<Plane> planes;
};

/// Live/peak counters of volumes that own voxel storage. Used by tests that
/// bound the sampler's working set.
struct VolumeAccounting {
  static std::size_t live() noexcept;
  static std::size_t peak() noexcept;
  /// Resets the peak to the current live count.
  static void reset_peak() noexcept;
};

/// A 3D scalar field with optional JSON metadata.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, float fill = 0.0f);
  Volume(Dims dims, std::vector<float> voxels);
  Volume(const Volume& other);
  Volume(Volume&& other) noexcept;
  Volume& operator=(const Volume& other);
  Volume& operator=(Volume&& other) noexcept;
  ~Volume();

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return voxels_.size(); }
  bool empty() const noexcept { return voxels_.empty(); }

  std::span<float> voxels() noexcept { return voxels_; }
  std::span<const float> voxels() const noexcept { return voxels_; }

  std::size_t offset(std::size_t a, std::size_t b, std::size_t c) const noexcept {
    return (a * dims_.d2 + b) * dims_.d3 + c;
  }
  float& operator()(std::size_t a, std::size_t b, std::size_t c) { return voxels_[offset(a, b, c)]; }
  float operator()(std::size_t a, std::size_t b, std::size_t c) const {
    return voxels_[offset(a, b, c)];
  }

  nlohmann::json& meta() noexcept { return meta_; }
  const nlohmann::json& meta() const noexcept { return meta_; }

  /// True when every voxel is finite.
  bool all_finite() const noexcept;

 private:
  void track();
  void untrack() noexcept;

  Dims dims_{};
  std::vector<float> voxels_;
  nlohmann::json meta_ = nlohmann::json::object();
  bool tracked_ = false;
};

/// Shape (rows, cols) of a cross-section perpendicular to `axis`.
std::pair<std::size_t, std::size_t> cross_section(const Dims& dims, ViewAxis axis);
std::size_t extent(const Dims& dims, ViewAxis axis);

Plane extract_slice(const Volume& v, ViewAxis axis, std::size_t index);

/// Clamp-to-edge padding: offsets outside the volume repeat the boundary slice.
SliceStack extract_stack(const Volume& v, ViewAxis axis, std::size_t index, std::size_t radius);

/// Overwrites one cross-section in place.
void write_slice_into(Volume& v, ViewAxis axis, std::size_t index, const Plane& plane);
/// Returns a copy of `v` with one cross-section replaced.
Volume write_slice(const Volume& v, ViewAxis axis, std::size_t index, const Plane& plane);

/// Affine map [lo, hi] -> [-1, 1]. The range is recorded under meta["normalization"].
Volume normalize(const Volume& v, double lo, double hi);
/// Inverse of normalize using the range stored in the metadata.
Volume denormalize(const Volume& v);
Volume denormalize(const Volume& v, double lo, double hi);

/// Separable Gaussian filter; the kernel is truncated at `radius` voxels and
/// renormalised over the in-bounds part of the window at the borders.
/// A zero sigma on an axis leaves that axis untouched.
Volume gaussian_filter(const Volume& v, std::array<double, 3> sigma, std::array<int, 3> radius);
/// Same filter applied in place to a double-precision buffer laid out like a volume.
void gaussian_filter(std::span<double> data, const Dims& dims, std::array<double, 3> sigma,
                     std::array<int, 3> radius);

/// `q`-quantile (0..1) of all voxels, linear interpolation between order statistics.
double quantile(std::span<const float> values, double q);

// File format: "MADMVOL1", u32 d1, u32 d2, u32 d3, u32 n_meta, n_meta bytes of
// JSON, d1*d2*d3 float32. All integers and floats little-endian.
inline constexpr std::string_view kVolumeMagic = "MADMVOL1";

void write_volume(const Volume& v, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);
std::vector<char> encode_volume(const Volume& v);
Volume decode_volume(std::span<const char> bytes);

}  // namespace madm
