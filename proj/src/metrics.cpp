#include "dav/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dav/error.hpp"

namespace dav {

double valid_fraction(const SparseDepth& gt) {
  if (gt.valid.numel() == 0) return 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < gt.valid.numel(); ++i) n += (gt.valid[i] != 0.0);
  return n / static_cast<double>(gt.valid.numel());
}

double rmse(const Tensor& pred, const SparseDepth& gt) {
  if (pred.numel() != gt.values.numel() || gt.values.numel() != gt.valid.numel()) {
    throw DataError("rmse: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                    shape_str(gt.values.shape()));
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (gt.valid[i] == 0.0) continue;
    const double d = pred[i] - gt.values[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw DataError("rmse: no valid ground-truth pixels");
  return std::sqrt(sum / static_cast<double>(n));
}

double mmd(const Tensor& pred, const Tensor& mask) {
  if (pred.numel() != mask.numel()) {
    throw DataError("mmd: prediction " + shape_str(pred.shape()) + " vs mask " +
                    shape_str(mask.shape()));
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    sum += pred[i];
    ++n;
  }
  if (n == 0) throw DataError("mmd: empty mask");
  return sum / static_cast<double>(n);
}

std::vector<std::size_t> select_target_indices(const std::vector<Tensor>& masks,
                                               const SparseDepth& gt, double threshold) {
  if (threshold <= 0) throw DataError("select_targets: threshold must be positive");
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const Tensor& m = masks[k];
    if (m.numel() != gt.values.numel()) {
      throw DataError("select_targets: mask " + std::to_string(k) + " shape " +
                      shape_str(m.shape()) + " vs ground truth " + shape_str(gt.values.shape()));
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.numel(); ++i) {
      if (m[i] == 0.0 || gt.valid[i] == 0.0) continue;
      sum += gt.values[i];
      ++n;
    }
    if (n == 0) continue;
    if (sum / static_cast<double>(n) < threshold) keep.push_back(k);
  }
  return keep;
}

std::vector<Tensor> select_targets(const std::vector<Tensor>& masks, const SparseDepth& gt,
                                   double threshold) {
  std::vector<Tensor> out;
  for (std::size_t k : select_target_indices(masks, gt, threshold)) out.push_back(masks[k]);
  return out;
}

namespace {

std::optional<double> ratio_of(double clean, double adv) {
  if (clean <= 0) return std::nullopt;
  return adv / clean;
}

}  // namespace

MetricReport ratio_report(double clean_rmse, double adv_rmse) {
  MetricReport r;
  r.clean_rmse = clean_rmse;
  r.adv_rmse = adv_rmse;
  r.rmse_ratio = ratio_of(clean_rmse, adv_rmse);
  return r;
}

MetricReport ratio_report(double clean_rmse, double adv_rmse, double clean_mmd, double adv_mmd) {
  MetricReport r = ratio_report(clean_rmse, adv_rmse);
  r.clean_mmd = clean_mmd;
  r.adv_mmd = adv_mmd;
  r.mmd_ratio = ratio_of(clean_mmd, adv_mmd);
  return r;
}

std::string format_ratio(double ratio) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.1fx", ratio);
  return buf;
}

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

const char* const kReportHeader =
    "image-id,method,mode,clean-rmse,adv-rmse,rmse-ratio,clean-mmd,adv-mmd,mmd-ratio";

namespace {

std::string opt_str(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> parse_opt(const std::string& field, const std::filesystem::path& path,
                                std::size_t line) {
  if (field.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": bad number '" + field + "'");
  }
  return v;
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << kReportHeader << "\n";
  for (const ReportRow& r : rows) {
    out << r.image_id << ',' << r.method << ',' << r.mode << ',' << format_double(r.metrics.clean_rmse)
        << ',' << format_double(r.metrics.adv_rmse) << ',' << opt_str(r.metrics.rmse_ratio) << ','
        << opt_str(r.metrics.clean_mmd) << ',' << opt_str(r.metrics.adv_mmd) << ','
        << opt_str(r.metrics.mmd_ratio) << "\n";
  }
  if (!out.flush()) throw DataError("write failed on " + path.string());
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kReportHeader) throw DataError(path.string() + ": unexpected header '" + line + "'");
  std::vector<ReportRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    // a trailing empty field is eaten by getline; restore it
    while (fields.size() < 9) fields.emplace_back();
    if (fields.size() != 9) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields, got " +
                      std::to_string(fields.size()));
    }
    ReportRow r;
    r.image_id = fields[0];
    r.method = fields[1];
    r.mode = fields[2];
    const auto need = [&](const std::string& s, const char* what) {
      const auto v = parse_opt(s, path, lineno);
      if (!v) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing " + what);
      }
      return *v;
    };
    r.metrics.clean_rmse = need(fields[3], "clean-rmse");
    r.metrics.adv_rmse = need(fields[4], "adv-rmse");
    r.metrics.rmse_ratio = parse_opt(fields[5], path, lineno);
    r.metrics.clean_mmd = parse_opt(fields[6], path, lineno);
    r.metrics.adv_mmd = parse_opt(fields[7], path, lineno);
    r.metrics.mmd_ratio = parse_opt(fields[8], path, lineno);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace dav
