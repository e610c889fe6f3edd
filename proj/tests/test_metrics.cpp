#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "dav/error.hpp"
#include "dav/metrics.hpp"
#include "dav/rng.hpp"

using namespace dav;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Two-pass oracle: count first, then accumulate the mean incrementally,
// deliberately not the same summation as the library.
double rmse_oracle(const Tensor& pred, const SparseDepth& gt) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) n += gt.valid[i] != 0.0;
  double mean = 0.0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (gt.valid[i] == 0.0) continue;
    const double d = pred[i] - gt.values[i];
    ++seen;
    mean += (d * d - mean) / static_cast<double>(seen);
  }
  (void)n;
  return std::sqrt(mean);
}

double mmd_oracle(const Tensor& pred, const Tensor& mask) {
  double mean = 0.0;
  std::size_t seen = 0;
  for (std::size_t i = pred.numel(); i-- > 0;) {  // reversed order on purpose
    if (mask[i] == 0.0) continue;
    ++seen;
    mean += (pred[i] - mean) / static_cast<double>(seen);
  }
  return mean;
}

}  // namespace

TEST_CASE("rmse basics") {
  Tensor gt_vals = Tensor::full({4, 4}, 12.0);
  Tensor valid = Tensor::full({4, 4}, 1.0);
  valid[3] = 0.0;
  SparseDepth gt{gt_vals, valid};

  CHECK(rmse(gt_vals, gt) == 0.0);

  Tensor off = Tensor::full({4, 4}, 15.0);
  CHECK(rmse(off, gt) == doctest::Approx(3.0).epsilon(1e-14));

  // {1,h,w} predictions are accepted
  Tensor pred3 = Tensor::full({1, 4, 4}, 15.0);
  CHECK(rmse(pred3, gt) == doctest::Approx(3.0).epsilon(1e-14));

  SparseDepth none{gt_vals, Tensor({4, 4})};
  CHECK_THROWS_AS(rmse(gt_vals, none), DataError);

  Tensor wrong({2, 2});
  CHECK_THROWS_AS(rmse(wrong, gt), DataError);
}

TEST_CASE("rmse and mmd match independent oracles on 100 random cases") {
  Rng rng(0x8e8);
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = 3 + rng.below(8), w = 3 + rng.below(8);
    Tensor pred = rand_tensor({h, w}, rng, 0.5, 99.0);
    SparseDepth gt;
    gt.values = rand_tensor({h, w}, rng, 1.0, 100.0);
    gt.valid = Tensor({h, w});
    for (std::size_t j = 0; j < gt.valid.numel(); ++j) {
      gt.valid[j] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    gt.valid[rng.below(h * w)] = 1.0;  // keep at least one valid pixel
    CHECK(rmse(pred, gt) == doctest::Approx(rmse_oracle(pred, gt)).epsilon(1e-12));

    Tensor mask = gt.valid;  // any nonempty 0/1 tensor works as a mask
    CHECK(mmd(pred, mask) == doctest::Approx(mmd_oracle(pred, mask)).epsilon(1e-12));
  }
}

TEST_CASE("rmse is insensitive to pixel order") {
  Rng rng(5);
  Tensor pred = rand_tensor({8, 8}, rng, 1.0, 80.0);
  SparseDepth gt;
  gt.values = rand_tensor({8, 8}, rng, 1.0, 80.0);
  gt.valid = Tensor::full({8, 8}, 1.0);
  Tensor pred_r({8, 8});
  SparseDepth gt_r{Tensor({8, 8}), Tensor::full({8, 8}, 1.0)};
  for (std::size_t i = 0; i < 64; ++i) {
    pred_r[63 - i] = pred[i];
    gt_r.values[63 - i] = gt.values[i];
  }
  CHECK(rmse(pred, gt) == doctest::Approx(rmse(pred_r, gt_r)).epsilon(1e-12));
}

TEST_CASE("mmd basics and linearity") {
  Tensor pred = Tensor::full({4, 4}, 20.0);
  Tensor mask({4, 4});
  mask[1] = mask[6] = mask[11] = 1.0;
  CHECK(mmd(pred, mask) == 20.0);

  Tensor half({2, 2}, {10.0, 10.0, 30.0, 30.0});
  CHECK(mmd(half, Tensor::full({2, 2}, 1.0)) == 20.0);

  CHECK_THROWS_AS(mmd(pred, Tensor({4, 4})), DataError);

  Rng rng(6);
  Tensor p = rand_tensor({5, 5}, rng, 1.0, 90.0);
  Tensor m({5, 5});
  for (std::size_t i = 0; i < 25; ++i) m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  m[7] = 1.0;
  Tensor p3(p.shape());
  for (std::size_t i = 0; i < 25; ++i) p3[i] = 3.25 * p[i];
  CHECK(mmd(p3, m) == doctest::Approx(3.25 * mmd(p, m)).epsilon(1e-12));
}

TEST_CASE("select_targets keeps near instances with valid ground truth") {
  SparseDepth gt;
  gt.values = Tensor({2, 4});
  gt.valid = Tensor({2, 4});
  // pixels 0,1: 11.4m valid; pixels 2,3: 60m valid; pixels 4,5: valid=0
  gt.values[0] = gt.values[1] = 11.4;
  gt.values[2] = gt.values[3] = 60.0;
  gt.values[4] = gt.values[5] = 8.0;
  gt.valid[0] = gt.valid[1] = gt.valid[2] = gt.valid[3] = 1.0;

  auto mask_of = [](std::initializer_list<std::size_t> px) {
    Tensor m({2, 4});
    for (std::size_t i : px) m[i] = 1.0;
    return m;
  };
  std::vector<Tensor> masks = {mask_of({0, 1}), mask_of({2, 3}), mask_of({4, 5})};

  const auto idx = select_target_indices(masks, gt, 50.0);
  REQUIRE(idx == std::vector<std::size_t>{0});

  const auto kept = select_targets(masks, gt, 50.0);
  REQUIRE(kept.size() == 1);
  CHECK(max_abs_diff(kept[0], masks[0]) == 0.0);

  // idempotent: selecting from the kept set keeps everything
  const auto again = select_targets(kept, gt, 50.0);
  REQUIRE(again.size() == kept.size());
  CHECK(max_abs_diff(again[0], kept[0]) == 0.0);

  CHECK_THROWS_AS(select_target_indices(masks, gt, 0.0), DataError);
}

TEST_CASE("ratio_report reproduces the reference arithmetic") {
  const MetricReport a = ratio_report(4.22, 11.54);
  REQUIRE(a.rmse_ratio.has_value());
  CHECK(format_ratio(*a.rmse_ratio) == "2.7x");
  CHECK(*a.rmse_ratio == doctest::Approx(11.54 / 4.22).epsilon(1e-15));

  const MetricReport b = ratio_report(3.0, 3.0, 20.76, 72.35);
  REQUIRE(b.mmd_ratio.has_value());
  CHECK(format_ratio(*b.mmd_ratio) == "3.5x");
  CHECK(format_ratio(*b.rmse_ratio) == "1.0x");

  const MetricReport z = ratio_report(0.0, 5.0);
  CHECK(!z.rmse_ratio.has_value());
}

TEST_CASE("report CSV round-trips, including absent fields") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "dav_test_report.csv";
  std::vector<ReportRow> rows;
  ReportRow r1;
  r1.image_id = "000001";
  r1.method = "ifgsm";
  r1.mode = "non-targeted";
  r1.metrics = ratio_report(3.5, 9.25);
  rows.push_back(r1);
  ReportRow r2;
  r2.image_id = "000002";
  r2.method = "mifgsm";
  r2.mode = "targeted";
  r2.metrics = ratio_report(4.0, 4.5, 18.5, 71.25);
  rows.push_back(r2);

  write_report_csv(path, rows);
  const auto back = read_report_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == "000001");
  CHECK(back[0].method == "ifgsm");
  CHECK(back[0].mode == "non-targeted");
  CHECK(back[0].metrics.clean_rmse == 3.5);
  CHECK(back[0].metrics.adv_rmse == 9.25);
  REQUIRE(back[0].metrics.rmse_ratio.has_value());
  CHECK(*back[0].metrics.rmse_ratio == 9.25 / 3.5);
  CHECK(!back[0].metrics.clean_mmd.has_value());
  REQUIRE(back[1].metrics.mmd_ratio.has_value());
  CHECK(*back[1].metrics.mmd_ratio == 71.25 / 18.5);

  write_report_csv(path, {});
  CHECK(read_report_csv(path).empty());
}

TEST_CASE("format_double round-trips exactly") {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const double v = rng.uniform(-1000.0, 1000.0);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(2.5) == "2.5");
}
