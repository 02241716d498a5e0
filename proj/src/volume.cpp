#include "madm/volume.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "madm/error.hpp"

namespace madm {

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

void bump_peak(std::size_t live) {
  std::size_t seen = g_peak.load(std::memory_order_relaxed);
  while (live > seen && !g_peak.compare_exchange_weak(seen, live, std::memory_order_relaxed)) {
  }
}

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return value;
}

template <typename T>
void put(std::vector<char>& out, T value) {
  value = to_little(value);
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const char> bytes, std::size_t at) {
  T value;
  std::memcpy(&value, bytes.data() + at, sizeof(T));
  return to_little(value);
}

void check_index(const Dims& dims, ViewAxis axis, std::size_t index) {
  if (index >= extent(dims, axis)) {
    throw RangeError("slice index " + std::to_string(index) + " out of range for " +
                     std::string(to_string(axis)) + " extent " +
                     std::to_string(extent(dims, axis)));
  }
}

}  // namespace

std::string_view to_string(ViewAxis axis) {
  switch (axis) {
    case ViewAxis::kCoronal:
      return "coronal";
    case ViewAxis::kSagittal:
      return "sagittal";
    case ViewAxis::kAxial:
      return "axial";
  }
  return "unknown";
}

ViewAxis parse_view_axis(std::string_view name) {
  for (auto axis : kAllViews) {
    if (to_string(axis) == name) return axis;
  }
  throw RangeError("unknown view axis '" + std::string(name) + "'");
}

std::size_t VolumeAccounting::live() noexcept { return g_live.load(); }
std::size_t VolumeAccounting::peak() noexcept { return g_peak.load(); }
void VolumeAccounting::reset_peak() noexcept { g_peak.store(g_live.load()); }

Volume::Volume(Dims dims, float fill) : dims_(dims), voxels_(dims.count(), fill) { track(); }

Volume::Volume(Dims dims, std::vector<float> voxels) : dims_(dims), voxels_(std::move(voxels)) {
  if (voxels_.size() != dims_.count()) {
    throw ShapeError("voxel count " + std::to_string(voxels_.size()) + " does not match dims " +
                     std::to_string(dims_.count()));
  }
  track();
}

Volume::Volume(const Volume& other)
    : dims_(other.dims_), voxels_(other.voxels_), meta_(other.meta_) {
  track();
}

Volume::Volume(Volume&& other) noexcept
    : dims_(other.dims_),
      voxels_(std::move(other.voxels_)),
      meta_(std::move(other.meta_)),
      tracked_(other.tracked_) {
  other.tracked_ = false;
  other.voxels_.clear();
  other.dims_ = {};
}

Volume& Volume::operator=(const Volume& other) {
  if (this != &other) {
    untrack();
    dims_ = other.dims_;
    voxels_ = other.voxels_;
    meta_ = other.meta_;
    track();
  }
  return *this;
}

Volume& Volume::operator=(Volume&& other) noexcept {
  if (this != &other) {
    untrack();
    dims_ = other.dims_;
    voxels_ = std::move(other.voxels_);
    meta_ = std::move(other.meta_);
    tracked_ = other.tracked_;
    other.tracked_ = false;
    other.voxels_.clear();
    other.dims_ = {};
  }
  return *this;
}

Volume::~Volume() { untrack(); }

void Volume::track() {
  if (!voxels_.empty() && !tracked_) {
    tracked_ = true;
    bump_peak(g_live.fetch_add(1) + 1);
  }
}

void Volume::untrack() noexcept {
  if (tracked_) {
    tracked_ = false;
    g_live.fetch_sub(1);
  }
}

bool Volume::all_finite() const noexcept {
  return std::all_of(voxels_.begin(), voxels_.end(), [](float v) { return std::isfinite(v); });
}

std::pair<std::size_t, std::size_t> cross_section(const Dims& dims, ViewAxis axis) {
  switch (axis) {
    case ViewAxis::kCoronal:
      return {dims.d2, dims.d3};
    case ViewAxis::kSagittal:
      return {dims.d1, dims.d3};
    case ViewAxis::kAxial:
      return {dims.d1, dims.d2};
  }
  return {0, 0};
}

std::size_t extent(const Dims& dims, ViewAxis axis) { return dims[axis_index(axis)]; }

Plane extract_slice(const Volume& v, ViewAxis axis, std::size_t index) {
  const auto& d = v.dims();
  check_index(d, axis, index);
  auto [rows, cols] = cross_section(d, axis);
  Plane plane(rows, cols);
  const auto src = v.voxels();
  switch (axis) {
    case ViewAxis::kCoronal:
      std::copy_n(src.begin() + v.offset(index, 0, 0), rows * cols, plane.values.begin());
      break;
    case ViewAxis::kSagittal:
      for (std::size_t a = 0; a < d.d1; ++a) {
        std::copy_n(src.begin() + v.offset(a, index, 0), d.d3, plane.values.begin() + a * d.d3);
      }
      break;
    case ViewAxis::kAxial:
      for (std::size_t a = 0; a < d.d1; ++a) {
        for (std::size_t b = 0; b < d.d2; ++b) plane(a, b) = src[v.offset(a, b, index)];
      }
      break;
  }
  return plane;
}

SliceStack extract_stack(const Volume& v, ViewAxis axis, std::size_t index, std::size_t radius) {
  check_index(v.dims(), axis, index);
  const auto n = static_cast<std::ptrdiff_t>(extent(v.dims(), axis));
  SliceStack stack{axis, index, radius, {}};
  stack.planes.reserve(2 * radius + 1);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::ptrdiff_t off = -r; off <= r; ++off) {
    const auto at = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(index) + off, 0, n - 1);
    stack.planes.push_back(extract_slice(v, axis, static_cast<std::size_t>(at)));
  }
  return stack;
}

void write_slice_into(Volume& v, ViewAxis axis, std::size_t index, const Plane& plane) {
  const auto& d = v.dims();
  check_index(d, axis, index);
  auto [rows, cols] = cross_section(d, axis);
  if (plane.rows != rows || plane.cols != cols || plane.values.size() != rows * cols) {
    throw ShapeError("plane " + std::to_string(plane.rows) + "x" + std::to_string(plane.cols) +
                     " does not fit " + std::string(to_string(axis)) + " cross-section " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  auto dst = v.voxels();
  switch (axis) {
    case ViewAxis::kCoronal:
      std::copy(plane.values.begin(), plane.values.end(), dst.begin() + v.offset(index, 0, 0));
      break;
    case ViewAxis::kSagittal:
      for (std::size_t a = 0; a < d.d1; ++a) {
        std::copy_n(plane.values.begin() + a * d.d3, d.d3, dst.begin() + v.offset(a, index, 0));
      }
      break;
    case ViewAxis::kAxial:
      for (std::size_t a = 0; a < d.d1; ++a) {
        for (std::size_t b = 0; b < d.d2; ++b) dst[v.offset(a, b, index)] = plane(a, b);
      }
      break;
  }
}

Volume write_slice(const Volume& v, ViewAxis axis, std::size_t index, const Plane& plane) {
  Volume out = v;
  write_slice_into(out, axis, index, plane);
  return out;
}

Volume normalize(const Volume& v, double lo, double hi) {
  if (!(hi > lo)) throw RangeError("normalize: hi must exceed lo");
  Volume out = v;
  const double scale = 2.0 / (hi - lo);
  for (auto& x : out.voxels()) x = static_cast<float>((static_cast<double>(x) - lo) * scale - 1.0);
  out.meta()["normalization"] = {{"lo", lo}, {"hi", hi}};
  return out;
}

Volume denormalize(const Volume& v, double lo, double hi) {
  if (!(hi > lo)) throw RangeError("denormalize: hi must exceed lo");
  Volume out = v;
  const double scale = (hi - lo) / 2.0;
  for (auto& x : out.voxels()) x = static_cast<float>((static_cast<double>(x) + 1.0) * scale + lo);
  out.meta().erase("normalization");
  return out;
}

Volume denormalize(const Volume& v) {
  const auto it = v.meta().find("normalization");
  if (it == v.meta().end()) throw RangeError("denormalize: volume carries no normalization range");
  return denormalize(v, it->at("lo").get<double>(), it->at("hi").get<double>());
}

void gaussian_filter(std::span<double> data, const Dims& d, std::array<double, 3> sigma,
                     std::array<int, 3> radius) {
  if (data.size() != d.count()) throw ShapeError("gaussian_filter: buffer does not match dims");
  std::vector<double> line;
  std::vector<double> result;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (sigma[axis] <= 0.0 || radius[axis] <= 0) continue;
    const int r = radius[axis];
    std::vector<double> kernel(2 * r + 1);
    for (int k = -r; k <= r; ++k) {
      kernel[k + r] = std::exp(-0.5 * k * k / (sigma[axis] * sigma[axis]));
    }
    const std::size_t n = d[axis];
    const std::size_t stride = axis == 0 ? d.d2 * d.d3 : axis == 1 ? d.d3 : 1;
    // Lines along `axis` start at every voxel whose `axis` coordinate is zero.
    const std::size_t outer = axis == 0 ? 1 : d.d1;
    const std::size_t mid = axis == 1 ? 1 : d.d2;
    const std::size_t inner = axis == 2 ? 1 : d.d3;
    line.resize(n);
    result.resize(n);
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < mid; ++b) {
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t base = (a * d.d2 + b) * d.d3 + c;
          for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * stride];
          for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            double norm = 0.0;
            const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - r);
            const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1,
                                                     static_cast<std::ptrdiff_t>(i) + r);
            for (auto j = lo; j <= hi; ++j) {
              const double w = kernel[j - static_cast<std::ptrdiff_t>(i) + r];
              acc += w * line[j];
              norm += w;
            }
            result[i] = acc / norm;
          }
          for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = result[i];
        }
      }
    }
  }
}

Volume gaussian_filter(const Volume& v, std::array<double, 3> sigma, std::array<int, 3> radius) {
  std::vector<double> buf(v.voxels().begin(), v.voxels().end());
  gaussian_filter(buf, v.dims(), sigma, radius);
  Volume out(v.dims());
  out.meta() = v.meta();
  std::transform(buf.begin(), buf.end(), out.voxels().begin(),
                 [](double x) { return static_cast<float>(x); });
  return out;
}

double quantile(std::span<const float> values, double q) {
  if (values.empty()) throw RangeError("quantile of empty set");
  if (q < 0.0 || q > 1.0) throw RangeError("quantile level outside [0, 1]");
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

std::vector<char> encode_volume(const Volume& v) {
  const auto& d = v.dims();
  const std::string meta = v.meta().dump();
  std::vector<char> out;
  out.reserve(kVolumeMagic.size() + 16 + meta.size() + v.size() * 4);
  out.insert(out.end(), kVolumeMagic.begin(), kVolumeMagic.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.d1));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.d2));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.d3));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  for (float x : v.voxels()) put<float>(out, x);
  return out;
}

Volume decode_volume(std::span<const char> bytes) {
  constexpr std::size_t kHeader = 8 + 16;
  if (bytes.size() < kVolumeMagic.size() ||
      std::string_view(bytes.data(), kVolumeMagic.size()) != kVolumeMagic) {
    throw FormatError(FormatError::Kind::kBadMagic, "bad format: missing MADMVOL1 magic");
  }
  if (bytes.size() < kHeader) {
    throw FormatError(FormatError::Kind::kTruncated, "truncated: header incomplete");
  }
  const Dims dims{get<std::uint32_t>(bytes, 8), get<std::uint32_t>(bytes, 12),
                  get<std::uint32_t>(bytes, 16)};
  const std::size_t meta_len = get<std::uint32_t>(bytes, 20);
  const std::size_t payload = dims.count() * 4;
  const std::size_t expected = kHeader + meta_len + payload;
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "truncated: header promises " + std::to_string(expected) + " bytes, file has " +
                          std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::kSizeMismatch,
                      "payload longer than header dims imply (" + std::to_string(bytes.size()) +
                          " > " + std::to_string(expected) + ")");
  }
  nlohmann::json meta;
  try {
    meta = meta_len == 0 ? nlohmann::json::object()
                         : nlohmann::json::parse(bytes.begin() + kHeader,
                                                 bytes.begin() + kHeader + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kInvalid, std::string("metadata is not JSON: ") + e.what());
  }
  std::vector<float> voxels(dims.count());
  const std::size_t at = kHeader + meta_len;
  for (std::size_t i = 0; i < voxels.size(); ++i) voxels[i] = get<float>(bytes, at + 4 * i);
  Volume v(dims, std::move(voxels));
  if (!v.all_finite()) throw FormatError(FormatError::Kind::kInvalid, "non-finite voxel in payload");
  v.meta() = std::move(meta);
  return v;
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  const auto bytes = encode_volume(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_volume(bytes);
}

}  // namespace madm
