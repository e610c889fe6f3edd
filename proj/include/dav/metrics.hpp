#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dav/tensor.hpp"

namespace dav {

// Ground-truth depth with a validity mask; only ~30% of pixels carry a value.
struct SparseDepth {
  Tensor values;  // {h,w} meters
  Tensor valid;   // {h,w} 0/1
};

double valid_fraction(const SparseDepth& gt);

// Root mean squared error over valid pixels. pred may be {h,w} or {1,h,w};
// only the element count must match. Rejects an all-invalid mask.
double rmse(const Tensor& pred, const SparseDepth& gt);

// Mean predicted depth over masked pixels ("masked mean depth"). Uses every
// masked prediction pixel; ground-truth validity does not enter.
double mmd(const Tensor& pred, const Tensor& mask);

// Keeps masks whose mean ground-truth depth over valid masked pixels is
// below the threshold; masks with no valid pixels are dropped.
std::vector<std::size_t> select_target_indices(const std::vector<Tensor>& masks,
                                               const SparseDepth& gt, double threshold);
std::vector<Tensor> select_targets(const std::vector<Tensor>& masks, const SparseDepth& gt,
                                   double threshold);

// Clean/adversarial pairs plus adv/clean ratios. A ratio is absent when its
// clean value is zero; MMD fields are absent for non-targeted runs.
struct MetricReport {
  double clean_rmse = 0.0;
  double adv_rmse = 0.0;
  std::optional<double> rmse_ratio;
  std::optional<double> clean_mmd;
  std::optional<double> adv_mmd;
  std::optional<double> mmd_ratio;
};

MetricReport ratio_report(double clean_rmse, double adv_rmse);
MetricReport ratio_report(double clean_rmse, double adv_rmse, double clean_mmd, double adv_mmd);

// Display form, one decimal: 2.7345 -> "2.7x".
std::string format_ratio(double ratio);

// Shortest representation that round-trips; used everywhere a double lands
// in a text file so artifacts are byte-stable.
std::string format_double(double v);

// One CSV line of an attack report.
struct ReportRow {
  std::string image_id;
  std::string method;
  std::string mode;
  MetricReport metrics;
};

extern const char* const kReportHeader;

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

}  // namespace dav
