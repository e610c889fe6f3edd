#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "dav/attacks.hpp"
#include "dav/error.hpp"
#include "dav/metrics.hpp"
#include "dav/models.hpp"
#include "dav/rng.hpp"
#include "dav/scene.hpp"

using namespace dav;

namespace {

std::vector<Sample> make_scenes(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SceneConfig cfg;
    cfg.height = size;
    cfg.width = size;
    cfg.seed = seed_stream(seed, "scene", i);
    out.push_back(generate_scene(cfg));
  }
  return out;
}

// One shared pair of lightly trained nets; training once keeps the binary
// fast while giving every case real, nonzero input gradients.
struct AttackFixture {
  std::vector<Sample> scenes;
  DepthNet net_a{Arch::kA, 5};
  DepthNet net_b{Arch::kB, 6};
};

const AttackFixture& fx() {
  static const AttackFixture f = [] {
    AttackFixture t;
    t.scenes = make_scenes(24, 16, 0xa1);
    train_depth(t.net_a, t.scenes, {}, 6, 3e-3, 9);
    train_depth(t.net_b, t.scenes, {}, 4, 3e-3, 10);
    return t;
  }();
  return f;
}

const Sample& scene_with_instance() {
  for (const Sample& s : fx().scenes) {
    if (!s.instances.empty()) return s;
  }
  REQUIRE(false);
  return fx().scenes[0];
}

// loss = <field, x>: gradient is the fixed field, independent of x.
struct FieldObjective : Objective {
  Tensor field;
  explicit FieldObjective(Tensor f) : field(std::move(f)) {}
  double dot(const Tensor& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += field[i] * x[i];
    return s;
  }
  double loss(const Tensor& x) override { return dot(x); }
  double loss_and_grad(const Tensor& x, Tensor& grad_x) override {
    grad_x = field;
    return dot(x);
  }
};

struct ScaledObjective : Objective {
  Objective& inner;
  double c;
  ScaledObjective(Objective& obj, double scale) : inner(obj), c(scale) {}
  double loss(const Tensor& x) override { return c * inner.loss(x); }
  double loss_and_grad(const Tensor& x, Tensor& grad_x) override {
    const double l = inner.loss_and_grad(x, grad_x);
    for (std::size_t i = 0; i < grad_x.numel(); ++i) grad_x[i] *= c;
    return c * l;
  }
};

bool in_ball(const Tensor& adv, const Tensor& x, double eps) {
  if (!adv.same_shape(x)) return false;
  if (max_abs_diff(adv, x) > eps + 1e-9) return false;
  return min_value(adv) >= 0.0 && max_value(adv) <= 255.0;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && max_abs_diff(a, b) == 0.0;
}

AttackConfig quick_cfg(double eps, double alpha, int iters) {
  AttackConfig cfg;
  cfg.epsilon = eps;
  cfg.alpha = alpha;
  cfg.iterations = iters;
  return cfg;
}

}  // namespace

TEST_CASE("iteration count follows the min(eps+4, 1.25 eps) rule") {
  CHECK(iteration_count(16.0) == 20);
  CHECK(iteration_count(8.0) == 10);
  CHECK(iteration_count(1.0) == 2);     // ceil(1.25)
  CHECK(iteration_count(2.5) == 4);     // ceil(3.125)
  CHECK(iteration_count(0.5) == 1);     // ceil(0.625)
  CHECK(iteration_count(0.0) == 1);     // zero budget still takes one step
  CHECK(iteration_count(100.0) == 104);
}

TEST_CASE("attack config validates its ranges") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.resolved_iterations() == 20);  // default epsilon 16

  cfg.iterations = 7;
  CHECK(cfg.resolved_iterations() == 7);

  AttackConfig zero;
  zero.epsilon = 0.0;
  CHECK_NOTHROW(zero.validate());
  CHECK(zero.resolved_iterations() == 1);

  AttackConfig bad = cfg;
  bad.epsilon = -1.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.iterations = -3;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.mu = -0.25;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.epsilon = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = cfg;
  bad.target_depth = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("clip_to_ball clamps to the ball and the pixel range") {
  const Tensor x = Tensor::full({2, 2}, 100.0);

  CHECK(bitwise_equal(clip_to_ball(x, x, 16.0), x));
  CHECK(clip_to_ball(Tensor::full({2, 2}, 130.0), x, 16.0)[0] == 116.0);
  CHECK(clip_to_ball(Tensor::full({2, 2}, 70.0), x, 16.0)[0] == 84.0);

  const Tensor bright = Tensor::full({2, 2}, 250.0);
  CHECK(clip_to_ball(Tensor::full({2, 2}, 270.0), bright, 16.0)[0] == 255.0);

  const Tensor dark = Tensor::full({2, 2}, 5.0);
  CHECK(clip_to_ball(Tensor::full({2, 2}, -10.0), dark, 16.0)[0] == 0.0);
  CHECK(clip_to_ball(Tensor::full({2, 2}, -10.0), dark, 2.0)[0] == 3.0);

  Rng rng(77);
  Tensor base({3, 4, 4});
  Tensor z({3, 4, 4});
  for (std::size_t i = 0; i < base.numel(); ++i) {
    base[i] = static_cast<double>(rng.below(256));
    z[i] = rng.uniform(-80.0, 335.0);
  }
  const Tensor once = clip_to_ball(z, base, 16.0);
  CHECK(bitwise_equal(clip_to_ball(once, base, 16.0), once));
  CHECK(in_ball(once, base, 16.0));

  CHECK_THROWS_AS(clip_to_ball(Tensor({2, 3}), x, 16.0), DataError);
}

TEST_CASE("build_target_depth composes the constant with the clean prediction") {
  TargetSpec spec;
  spec.mask = Tensor::full({4, 4}, 1.0);
  spec.depth = 100.0;
  const Tensor clean = Tensor::full({4, 4}, 20.0);

  const Tensor all = build_target_depth(clean, spec);
  CHECK(min_value(all) == 100.0);
  CHECK(max_value(all) == 100.0);

  // left half pushed, right half kept
  for (std::size_t yy = 0; yy < 4; ++yy) {
    spec.mask.at(yy, 2) = 0.0;
    spec.mask.at(yy, 3) = 0.0;
  }
  const Tensor half = build_target_depth(clean, spec);
  CHECK(half.at(1, 0) == 100.0);
  CHECK(half.at(1, 1) == 100.0);
  CHECK(half.at(1, 2) == 20.0);
  CHECK(half.at(1, 3) == 20.0);

  // {1,h,w} predictions keep their shape
  const Tensor chw = build_target_depth(clean.reshaped({1, 4, 4}), spec);
  CHECK(chw.shape() == Shape{1, 4, 4});
  CHECK(chw.at(0, 1, 0) == 100.0);
  CHECK(chw.at(0, 1, 3) == 20.0);

  TargetSpec empty;
  empty.mask = Tensor({4, 4});
  CHECK_THROWS_AS(build_target_depth(clean, empty), DataError);

  TargetSpec soft;
  soft.mask = Tensor::full({4, 4}, 0.5);
  CHECK_THROWS_AS(build_target_depth(clean, soft), DataError);

  CHECK_THROWS_AS(build_target_depth(Tensor::full({3, 3}, 20.0), spec), DataError);
}

TEST_CASE("least likely label is the per-pixel argmin with low-index ties") {
  Tensor probs({3, 1, 1});
  probs[0] = 0.7;
  probs[1] = 0.2;
  probs[2] = 0.1;
  CHECK(least_likely_label(probs)[0] == 2.0);

  CHECK(least_likely_label(Tensor::full({4, 2, 2}, 0.25))[0] == 0.0);

  // brute-force oracle over random tensors, coarse values to force ties
  Rng rng(31);
  for (int round = 0; round < 100; ++round) {
    Tensor p({4, 8, 8});
    for (std::size_t i = 0; i < p.numel(); ++i) {
      p[i] = static_cast<double>(rng.below(5)) / 10.0;
    }
    const Tensor got = least_likely_label(p);
    REQUIRE(got.shape() == Shape{8, 8});
    for (std::size_t yy = 0; yy < 8; ++yy) {
      for (std::size_t xx = 0; xx < 8; ++xx) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < 4; ++c) {
          if (p.at(c, yy, xx) < p.at(best, yy, xx)) best = c;
        }
        REQUIRE(got.at(yy, xx) == static_cast<double>(best));
      }
    }
  }

  CHECK_THROWS_AS(least_likely_label(Tensor({4, 4})), DataError);
}

TEST_CASE("cores on a synthetic loss field") {
  Tensor x = Tensor::full({3, 4, 4}, 128.0);
  Tensor field({3, 4, 4});
  Rng rng(9);
  for (std::size_t i = 0; i < field.numel(); ++i) field[i] = rng.uniform(-1.0, 1.0);
  field[5] = 0.0;  // keep one stationary pixel
  FieldObjective obj(field);

  SUBCASE("fgsm steps exactly epsilon along the sign") {
    const AttackConfig cfg = quick_cfg(16.0, 1.0, 0);
    const AttackResult r = fgsm(obj, x, cfg, Direction::kAscend);
    REQUIRE(r.loss_traj.size() == 2);
    CHECK(r.loss_traj[1] > r.loss_traj[0]);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double want = field[i] > 0 ? 16.0 : field[i] < 0 ? -16.0 : 0.0;
      CHECK(r.x_adv[i] - x[i] == want);
    }
  }

  SUBCASE("descend flips the step") {
    const AttackConfig cfg = quick_cfg(4.0, 1.0, 0);
    const AttackResult up = fgsm(obj, x, cfg, Direction::kAscend);
    const AttackResult down = fgsm(obj, x, cfg, Direction::kDescend);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(up.x_adv[i] - x[i] == -(down.x_adv[i] - x[i]));
    }
    CHECK(down.loss_traj[1] < down.loss_traj[0]);
  }

  SUBCASE("zero field leaves the image untouched") {
    FieldObjective flat(Tensor({3, 4, 4}));
    const AttackConfig cfg = quick_cfg(16.0, 2.0, 5);
    CHECK(bitwise_equal(fgsm(flat, x, cfg, Direction::kAscend).x_adv, x));
    CHECK(bitwise_equal(ifgsm(flat, x, cfg, Direction::kAscend).x_adv, x));
    CHECK(bitwise_equal(mifgsm(flat, x, cfg, Direction::kAscend).x_adv, x));
  }

  SUBCASE("constant gradient makes momentum and plain iteration agree") {
    AttackConfig cfg = quick_cfg(10.0, 1.0, 8);
    cfg.mu = 1.0;
    const AttackResult mi = mifgsm(obj, x, cfg, Direction::kAscend);
    const AttackResult plain = ifgsm(obj, x, cfg, Direction::kAscend);
    CHECK(bitwise_equal(mi.x_adv, plain.x_adv));
    REQUIRE(mi.loss_traj.size() == 9);
    CHECK(mi.loss_traj == plain.loss_traj);
  }

  SUBCASE("iterates stay in the ball even when alpha overshoots") {
    const AttackConfig cfg = quick_cfg(5.0, 7.0, 6);
    const AttackResult r = ifgsm(obj, x, cfg, Direction::kAscend);
    CHECK(in_ball(r.x_adv, x, 5.0));
  }

  SUBCASE("non-finite objectives are rejected") {
    Tensor poison = field;
    poison[3] = std::numeric_limits<double>::infinity();
    FieldObjective hot(poison);
    const AttackConfig cfg = quick_cfg(8.0, 1.0, 0);
    CHECK_THROWS_AS(ifgsm(hot, x, cfg, Direction::kAscend), NumericError);

    struct NanLoss : Objective {
      double loss(const Tensor&) override { return std::numeric_limits<double>::quiet_NaN(); }
      double loss_and_grad(const Tensor& xx, Tensor& g) override {
        g = Tensor(xx.shape());
        return std::numeric_limits<double>::quiet_NaN();
      }
    } nan_loss;
    CHECK_THROWS_AS(fgsm(nan_loss, x, cfg, Direction::kAscend), NumericError);
  }
}

TEST_CASE("attacks on a trained depth net") {
  const AttackFixture& f = fx();
  const Sample& s = f.scenes[1];
  const SparseDepth gt{s.depth, s.valid};

  SUBCASE("non-targeted ascent raises the loss and respects the ball") {
    const AttackConfig cfg = quick_cfg(8.0, 1.0, 0);
    const AttackResult r = ifgsm(f.net_a, s.rgb, gt, cfg, Direction::kAscend);
    REQUIRE(r.loss_traj.size() == 11);
    CHECK(r.loss_traj.back() > r.loss_traj.front());
    CHECK(in_ball(r.x_adv, s.rgb, 8.0));
    CHECK(bitwise_equal(r.clean_pred, f.net_a.predict(s.rgb)));
    CHECK(bitwise_equal(r.adv_pred, f.net_a.predict(r.x_adv)));
  }

  SUBCASE("one iteration of ifgsm at alpha=epsilon is fgsm") {
    const AttackConfig one = quick_cfg(8.0, 8.0, 1);
    AttackConfig fg = one;
    fg.alpha = 1.0;  // fgsm ignores alpha
    const AttackResult a = fgsm(f.net_a, s.rgb, gt, fg, Direction::kAscend);
    const AttackResult b = ifgsm(f.net_a, s.rgb, gt, one, Direction::kAscend);
    CHECK(bitwise_equal(a.x_adv, b.x_adv));
    CHECK(a.loss_traj == b.loss_traj);
  }

  SUBCASE("zero momentum reduces to plain iteration bitwise") {
    AttackConfig cfg = quick_cfg(6.0, 1.0, 7);
    cfg.mu = 0.0;
    const AttackResult mi = mifgsm(f.net_a, s.rgb, gt, cfg, Direction::kAscend);
    const AttackResult plain = ifgsm(f.net_a, s.rgb, gt, cfg, Direction::kAscend);
    CHECK(bitwise_equal(mi.x_adv, plain.x_adv));
    CHECK(mi.loss_traj == plain.loss_traj);
  }

  SUBCASE("runs are deterministic") {
    const AttackConfig cfg = quick_cfg(8.0, 1.0, 5);
    const AttackResult r1 = mifgsm(f.net_a, s.rgb, gt, cfg, Direction::kAscend);
    const AttackResult r2 = mifgsm(f.net_a, s.rgb, gt, cfg, Direction::kAscend);
    CHECK(bitwise_equal(r1.x_adv, r2.x_adv));
    CHECK(r1.loss_traj == r2.loss_traj);
  }

  SUBCASE("positive loss scaling does not move the iterates") {
    DepthL2Objective base(f.net_a, s.depth, s.valid);
    const AttackConfig cfg = quick_cfg(8.0, 1.0, 4);

    ScaledObjective odd(base, 3.7);
    CHECK(bitwise_equal(fgsm(base, s.rgb, cfg, Direction::kAscend).x_adv,
                        fgsm(odd, s.rgb, cfg, Direction::kAscend).x_adv));
    CHECK(bitwise_equal(ifgsm(base, s.rgb, cfg, Direction::kAscend).x_adv,
                        ifgsm(odd, s.rgb, cfg, Direction::kAscend).x_adv));

    // momentum divides by the L1 norm, so bit-equality needs a power of two
    ScaledObjective pow2(base, 0.25);
    CHECK(bitwise_equal(mifgsm(base, s.rgb, cfg, Direction::kAscend).x_adv,
                        mifgsm(pow2, s.rgb, cfg, Direction::kAscend).x_adv));
  }

  SUBCASE("fgsm moves interior pixels by exactly epsilon") {
    DepthL2Objective obj(f.net_a, s.depth, s.valid);
    Tensor grad;
    obj.loss_and_grad(s.rgb, grad);
    REQUIRE(l1_norm(grad) > 0.0);

    const AttackConfig cfg = quick_cfg(16.0, 1.0, 0);
    const AttackResult r = fgsm(f.net_a, s.rgb, gt, cfg, Direction::kAscend);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < grad.numel(); ++i) {
      if (grad[i] == 0.0) continue;
      if (s.rgb[i] < 16.0 || s.rgb[i] > 239.0) continue;
      CHECK(std::abs(r.x_adv[i] - s.rgb[i]) == 16.0);
      ++moved;
    }
    CHECK(moved > 0);
  }

  SUBCASE("a poisoned net raises NumericError") {
    DepthNet hot = f.net_a;
    hot.params().back().value[0] = 1e200;
    const AttackConfig cfg = quick_cfg(8.0, 1.0, 2);
    CHECK_THROWS_AS(ifgsm(hot, s.rgb, gt, cfg, Direction::kAscend), NumericError);
  }
}

TEST_CASE("attack_depth drives a full run") {
  const AttackFixture& f = fx();
  const Sample& s = scene_with_instance();
  const SparseDepth gt{s.depth, s.valid};

  SUBCASE("non-targeted white box") {
    AttackConfig cfg = quick_cfg(16.0, 1.0, 10);
    const AttackResult r = attack_depth(Method::kIfgsm, f.net_a, f.net_a, s, cfg);
    CHECK(in_ball(r.x_adv, s.rgb, 16.0));
    CHECK(bitwise_equal(r.clean_pred, f.net_a.predict(s.rgb)));
    CHECK(r.metrics.clean_rmse == rmse(r.clean_pred, gt));
    CHECK(r.metrics.adv_rmse == rmse(r.adv_pred, gt));
    CHECK(r.metrics.adv_rmse > r.metrics.clean_rmse);
    REQUIRE(r.metrics.rmse_ratio.has_value());
    CHECK(!r.metrics.clean_mmd.has_value());
    CHECK(!r.metrics.mmd_ratio.has_value());

    const TargetSpec stray{s.instances[0].mask, 100.0};
    CHECK_THROWS_AS(attack_depth(Method::kIfgsm, f.net_a, f.net_a, s, cfg, &stray), UsageError);
  }

  SUBCASE("targeted run pushes masked depth toward the constant") {
    AttackConfig cfg = quick_cfg(16.0, 1.0, 10);
    cfg.mode = AttackMode::kTargeted;
    const TargetSpec spec{s.instances[0].mask, 100.0};
    const AttackResult r = attack_depth(Method::kMifgsm, f.net_a, f.net_a, s, cfg, &spec);
    CHECK(in_ball(r.x_adv, s.rgb, 16.0));
    CHECK(r.loss_traj.back() <= r.loss_traj.front());
    REQUIRE(r.metrics.clean_mmd.has_value());
    REQUIRE(r.metrics.adv_mmd.has_value());
    CHECK(*r.metrics.clean_mmd == mmd(r.clean_pred, spec.mask));
    CHECK(*r.metrics.adv_mmd == mmd(r.adv_pred, spec.mask));
    CHECK(*r.metrics.adv_mmd > *r.metrics.clean_mmd);

    CHECK_THROWS_AS(attack_depth(Method::kMifgsm, f.net_a, f.net_a, s, cfg), UsageError);
  }

  SUBCASE("zero budget is the identity attack") {
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    const AttackResult r = attack_depth(Method::kFgsm, f.net_a, f.net_a, s, cfg);
    CHECK(bitwise_equal(r.x_adv, s.rgb));
    CHECK(bitwise_equal(r.adv_pred, r.clean_pred));
    REQUIRE(r.metrics.rmse_ratio.has_value());
    CHECK(*r.metrics.rmse_ratio == 1.0);
  }

  SUBCASE("transfer run crafts on one net and scores on another") {
    AttackConfig cfg = quick_cfg(16.0, 1.0, 8);
    const AttackResult r = attack_depth(Method::kMifgsm, f.net_a, f.net_b, s, cfg);
    CHECK(in_ball(r.x_adv, s.rgb, 16.0));
    CHECK(bitwise_equal(r.clean_pred, f.net_b.predict(s.rgb)));
    CHECK(bitwise_equal(r.adv_pred, f.net_b.predict(r.x_adv)));
    CHECK(std::isfinite(r.metrics.adv_rmse));
  }
}

TEST_CASE("method and mode names round-trip") {
  CHECK(method_id(Method::kFgsm) == std::string("fgsm"));
  CHECK(method_id(Method::kIfgsm) == std::string("ifgsm"));
  CHECK(method_id(Method::kMifgsm) == std::string("mifgsm"));
  CHECK(parse_method("mifgsm") == Method::kMifgsm);
  CHECK_THROWS_AS(parse_method("pgd"), DataError);
  CHECK(mode_id(AttackMode::kTargeted) == std::string("targeted"));
  CHECK(parse_mode("non-targeted") == AttackMode::kNonTargeted);
  CHECK_THROWS_AS(parse_mode("both"), DataError);
}
