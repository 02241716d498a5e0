#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "madm/volume.hpp"

namespace madm {

double mse(const Volume& pred, const Volume& ref);
double rmse(const Volume& pred, const Volume& ref);
/// sum((pred - ref)^2) / sum(ref^2)
double nmse(const Volume& pred, const Volume& ref);

/// Dynamic range used for PSNR and SSIM: the reference maximum.
double peak(const Volume& ref);

/// 20 log10(peak) - 10 log10(mse). +inf when the volumes are identical.
double psnr(const Volume& pred, const Volume& ref, double peak_value);
double psnr(const Volume& pred, const Volume& ref);

struct SsimOptions {
  double sigma = 1.5;
  int radius = 5;  // 11-voxel support
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM with a truncated 3D Gaussian window. Symmetric in its two
/// volume arguments for a fixed dynamic range.
double ssim(const Volume& a, const Volume& b, double dynamic_range, const SsimOptions& options = {});
/// Dynamic range taken from the reference volume.
double ssim(const Volume& pred, const Volume& ref);

/// |mean(pred over mask) - mean(ref over mask)| per mask.
std::vector<double> lesion_mean_error(const Volume& pred, const Volume& ref,
                                      const std::vector<Volume>& masks);

/// Formats a PSNR value, mapping +inf to the "identical" sentinel.
std::string format_psnr(double value);

struct VolumeRow {
  std::string sample_id;
  double dose_fraction = 0.0;
  std::string method;
  int replicate = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
  double nmse = 0.0;
  double peak = 0.0;
};

struct LesionRow {
  std::string sample_id;
  std::string method;
  int replicate = 0;
  int lesion_id = 0;
  double abs_mean_error = 0.0;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  std::size_t n = 0;
};

Summary summarize(std::vector<double> values);
double median(std::vector<double> values);

/// Per-volume and per-lesion evaluation rows with per-method aggregates.
class EvalReport {
 public:
  /// Scores one prediction and appends its rows.
  void add(const std::string& sample_id, double dose_fraction, const std::string& method,
           int replicate, const Volume& pred, const Volume& ref, const std::vector<Volume>& masks);
  void add_row(VolumeRow row) { rows_.push_back(std::move(row)); }
  void add_lesion_row(LesionRow row) { lesions_.push_back(std::move(row)); }

  const std::vector<VolumeRow>& rows() const noexcept { return rows_; }
  const std::vector<LesionRow>& lesion_rows() const noexcept { return lesions_; }

  std::vector<std::string> methods() const;
  std::vector<double> column(const std::string& method, double VolumeRow::*field) const;

  /// Aggregates keyed by method: mean/std/median of each metric.
  nlohmann::json aggregate() const;

  /// CSV text. `header_comment` lines are emitted first, each prefixed with "# ".
  std::string volume_csv(const std::vector<std::string>& header_comment = {}) const;
  std::string lesion_csv(const std::vector<std::string>& header_comment = {}) const;

  static EvalReport parse_volume_csv(const std::string& text);

 private:
  std::vector<VolumeRow> rows_;
  std::vector<LesionRow> lesions_;
};

}  // namespace madm
