#include "madm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "madm/error.hpp"

namespace madm {

namespace {

void check_dims(const Volume& a, const Volume& b, const char* what) {
  if (a.dims() != b.dims()) throw ShapeError(std::string(what) + ": dims differ");
  if (a.empty()) throw ShapeError(std::string(what) + ": empty volume");
}

std::string fmt_double(double v, const char* spec = "%.9g") {
  if (std::isinf(v) && v > 0) return "identical";
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "identical") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

nlohmann::json json_number(double v) {
  if (std::isinf(v) && v > 0) return "identical";
  return v;
}

}  // namespace

double mse(const Volume& pred, const Volume& ref) {
  check_dims(pred, ref, "mse");
  const auto p = pred.voxels();
  const auto r = ref.voxels();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - r[i];
    acc += d * d;
  }
  return acc / static_cast<double>(p.size());
}

double rmse(const Volume& pred, const Volume& ref) { return std::sqrt(mse(pred, ref)); }

double nmse(const Volume& pred, const Volume& ref) {
  check_dims(pred, ref, "nmse");
  const auto p = pred.voxels();
  const auto r = ref.voxels();
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - r[i];
    num += d * d;
    den += static_cast<double>(r[i]) * r[i];
  }
  if (den == 0.0) throw RangeError("nmse: reference has zero energy");
  return num / den;
}

double peak(const Volume& ref) {
  if (ref.empty()) throw ShapeError("peak: empty volume");
  return *std::max_element(ref.voxels().begin(), ref.voxels().end());
}

double psnr(const Volume& pred, const Volume& ref, double peak_value) {
  const double m = mse(pred, ref);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak_value) - 10.0 * std::log10(m);
}

double psnr(const Volume& pred, const Volume& ref) { return psnr(pred, ref, peak(ref)); }

double ssim(const Volume& a, const Volume& b, double dynamic_range, const SsimOptions& options) {
  check_dims(a, b, "ssim");
  const double c1 = std::pow(options.k1 * dynamic_range, 2);
  const double c2 = std::pow(options.k2 * dynamic_range, 2);
  const std::array<double, 3> sigma{options.sigma, options.sigma, options.sigma};
  const std::array<int, 3> radius{options.radius, options.radius, options.radius};

  const std::size_t n = a.size();
  std::vector<double> mu_a(n), mu_b(n), m_aa(n), m_bb(n), m_ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.voxels()[i];
    const double y = b.voxels()[i];
    mu_a[i] = x;
    mu_b[i] = y;
    m_aa[i] = x * x;
    m_bb[i] = y * y;
    m_ab[i] = x * y;
  }
  for (auto* buf : {&mu_a, &mu_b, &m_aa, &m_bb, &m_ab}) gaussian_filter(*buf, a.dims(), sigma, radius);

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = m_aa[i] - ma * ma;
    const double vb = m_bb[i] - mb * mb;
    const double cov = m_ab[i] - ma * mb;
    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(a.size());
}

double ssim(const Volume& pred, const Volume& ref) { return ssim(pred, ref, peak(ref)); }

std::vector<double> lesion_mean_error(const Volume& pred, const Volume& ref,
                                      const std::vector<Volume>& masks) {
  check_dims(pred, ref, "lesion_mean_error");
  std::vector<double> out;
  out.reserve(masks.size());
  for (const auto& mask : masks) {
    if (mask.dims() != ref.dims()) throw ShapeError("lesion_mean_error: mask dims differ");
    double sp = 0.0;
    double sr = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask.voxels()[i] > 0.5f) {
        sp += pred.voxels()[i];
        sr += ref.voxels()[i];
        ++n;
      }
    }
    if (n == 0) throw RangeError("lesion_mean_error: empty lesion mask");
    out.push_back(std::abs(sp / n - sr / n));
  }
  return out;
}

std::string format_psnr(double value) { return fmt_double(value, "%.6f"); }

double median(std::vector<double> values) {
  if (values.empty()) throw RangeError("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.median = median(values);
  if (std::any_of(values.begin(), values.end(), [](double v) { return std::isinf(v); })) {
    s.mean = std::numeric_limits<double>::infinity();
    s.std = 0.0;
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = s.n > 1 ? std::sqrt(var / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

void EvalReport::add(const std::string& sample_id, double dose_fraction, const std::string& method,
                     int replicate, const Volume& pred, const Volume& ref,
                     const std::vector<Volume>& masks) {
  VolumeRow row;
  row.sample_id = sample_id;
  row.dose_fraction = dose_fraction;
  row.method = method;
  row.replicate = replicate;
  row.peak = peak(ref);
  row.psnr_db = psnr(pred, ref, row.peak);
  row.ssim = ssim(pred, ref, row.peak);
  row.rmse = rmse(pred, ref);
  row.nmse = nmse(pred, ref);
  rows_.push_back(row);
  const auto errors = lesion_mean_error(pred, ref, masks);
  for (std::size_t k = 0; k < errors.size(); ++k) {
    lesions_.push_back({sample_id, method, replicate, static_cast<int>(k), errors[k]});
  }
}

std::vector<std::string> EvalReport::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows_) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  }
  return out;
}

std::vector<double> EvalReport::column(const std::string& method, double VolumeRow::*field) const {
  std::vector<double> out;
  for (const auto& r : rows_) {
    if (r.method == method) out.push_back(r.*field);
  }
  return out;
}

nlohmann::json EvalReport::aggregate() const {
  nlohmann::json out = nlohmann::json::object();
  const std::pair<const char*, double VolumeRow::*> fields[] = {{"psnr_db", &VolumeRow::psnr_db},
                                                                {"ssim", &VolumeRow::ssim},
                                                                {"rmse", &VolumeRow::rmse},
                                                                {"nmse", &VolumeRow::nmse}};
  for (const auto& m : methods()) {
    nlohmann::json entry;
    for (const auto& [name, field] : fields) {
      const auto s = summarize(column(m, field));
      entry[name] = {{"mean", json_number(s.mean)},
                     {"std", json_number(s.std)},
                     {"median", json_number(s.median)},
                     {"n", s.n}};
    }
    std::vector<double> lesion;
    for (const auto& l : lesions_) {
      if (l.method == m) lesion.push_back(l.abs_mean_error);
    }
    if (!lesion.empty()) {
      const auto s = summarize(lesion);
      entry["lesion_abs_mean_error"] = {
          {"mean", s.mean}, {"std", s.std}, {"median", s.median}, {"n", s.n}};
    }
    out[m] = entry;
  }
  return out;
}

std::string EvalReport::volume_csv(const std::vector<std::string>& header_comment) const {
  std::ostringstream os;
  for (const auto& line : header_comment) os << "# " << line << "\n";
  os << "sample_id,dose_fraction,method,replicate,psnr_db,ssim,rmse,nmse,peak\n";
  for (const auto& r : rows_) {
    os << r.sample_id << ',' << fmt_double(r.dose_fraction) << ',' << r.method << ','
       << r.replicate << ',' << format_psnr(r.psnr_db) << ',' << fmt_double(r.ssim, "%.8f") << ','
       << fmt_double(r.rmse, "%.8g") << ',' << fmt_double(r.nmse, "%.8g") << ','
       << fmt_double(r.peak, "%.8g") << "\n";
  }
  return os.str();
}

std::string EvalReport::lesion_csv(const std::vector<std::string>& header_comment) const {
  std::ostringstream os;
  for (const auto& line : header_comment) os << "# " << line << "\n";
  os << "sample_id,method,replicate,lesion_id,abs_mean_error\n";
  for (const auto& l : lesions_) {
    os << l.sample_id << ',' << l.method << ',' << l.replicate << ',' << l.lesion_id << ','
       << fmt_double(l.abs_mean_error, "%.8g") << "\n";
  }
  return os.str();
}

EvalReport EvalReport::parse_volume_csv(const std::string& text) {
  EvalReport report;
  std::istringstream is(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError(FormatError::Kind::kInvalid, "bad eval row: " + line);
    VolumeRow r;
    r.sample_id = cells[0];
    r.dose_fraction = std::stod(cells[1]);
    r.method = cells[2];
    r.replicate = std::stoi(cells[3]);
    r.psnr_db = parse_double(cells[4]);
    r.ssim = std::stod(cells[5]);
    r.rmse = std::stod(cells[6]);
    r.nmse = std::stod(cells[7]);
    r.peak = std::stod(cells[8]);
    report.add_row(std::move(r));
  }
  return report;
}

}  // namespace madm
