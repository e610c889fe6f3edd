#include "dav/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "dav/error.hpp"

namespace dav {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }

void check_pixel_range(const Tensor& x) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!(x[i] >= 0.0 && x[i] <= 255.0)) {
      throw DataError("attack: input pixel " + std::to_string(i) + " is " +
                      format_double(x[i]) + ", outside [0, 255]");
    }
  }
}

// The shared loop: FGSM is one step of size epsilon, the iterative methods
// take alpha-sized steps, MI-FGSM steers by the momentum buffer instead of
// the raw gradient.
AttackResult run_core(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir,
                      Method method) {
  cfg.validate();
  check_pixel_range(x);
  const double way = dir == Direction::kAscend ? 1.0 : -1.0;
  const bool single = method == Method::kFgsm;
  const int steps = single ? 1 : cfg.resolved_iterations();
  const double alpha = single ? cfg.epsilon : cfg.alpha;

  AttackResult out;
  out.loss_traj.reserve(static_cast<std::size_t>(steps) + 1);
  Tensor xt = x;
  Tensor grad;
  Tensor momentum;
  for (int t = 0; t < steps; ++t) {
    const double l = obj.loss_and_grad(xt, grad);
    if (!std::isfinite(l)) {
      throw NumericError("attack: non-finite loss at iteration " + std::to_string(t));
    }
    if (!grad.same_shape(x)) {
      throw DataError("attack: gradient shape " + shape_str(grad.shape()) +
                      " does not match the image " + shape_str(x.shape()));
    }
    if (!grad.all_finite()) {
      throw NumericError("attack: non-finite gradient at iteration " + std::to_string(t));
    }
    out.loss_traj.push_back(l);

    const Tensor* steer = &grad;
    if (method == Method::kMifgsm) {
      if (t == 0) momentum = Tensor(grad.shape());
      const double norm = std::max(l1_norm(grad), 1e-12);
      for (std::size_t i = 0; i < grad.numel(); ++i) {
        momentum[i] = cfg.mu * momentum[i] + grad[i] / norm;
      }
      steer = &momentum;
    }

    Tensor z = xt;
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] += way * alpha * sign_of((*steer)[i]);
    xt = clip_to_ball(z, x, cfg.epsilon);
  }
  const double final_loss = obj.loss(xt);
  if (!std::isfinite(final_loss)) {
    throw NumericError("attack: non-finite loss at iteration " + std::to_string(steps));
  }
  out.loss_traj.push_back(final_loss);
  out.x_adv = std::move(xt);
  return out;
}

AttackResult run_net(Method method, const DepthNet& net, const Tensor& x, const SparseDepth& y,
                     const AttackConfig& cfg, Direction dir) {
  DepthL2Objective obj(net, y.values, y.valid);
  AttackResult r = run_core(obj, x, cfg, dir, method);
  r.clean_pred = obj.predict(x);
  r.adv_pred = obj.predict(r.x_adv);
  return r;
}

}  // namespace

const char* mode_id(AttackMode mode) {
  return mode == AttackMode::kTargeted ? "targeted" : "non-targeted";
}

const char* method_id(Method method) {
  switch (method) {
    case Method::kFgsm: return "fgsm";
    case Method::kIfgsm: return "ifgsm";
    default: return "mifgsm";
  }
}

AttackMode parse_mode(std::string_view id) {
  if (id == "non-targeted") return AttackMode::kNonTargeted;
  if (id == "targeted") return AttackMode::kTargeted;
  throw DataError("unknown attack mode '" + std::string(id) +
                  "' (want non-targeted or targeted)");
}

Method parse_method(std::string_view id) {
  if (id == "fgsm") return Method::kFgsm;
  if (id == "ifgsm") return Method::kIfgsm;
  if (id == "mifgsm") return Method::kMifgsm;
  throw DataError("unknown attack method '" + std::string(id) +
                  "' (want fgsm, ifgsm or mifgsm)");
}

void AttackConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw UsageError("attack: epsilon must be finite and >= 0");
  }
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    throw UsageError("attack: alpha must be finite and positive");
  }
  if (iterations < 0) {
    throw UsageError("attack: iterations must be positive (0 means the epsilon rule)");
  }
  if (!std::isfinite(mu) || mu < 0.0) {
    throw UsageError("attack: mu must be finite and >= 0");
  }
  if (!std::isfinite(target_depth)) {
    throw UsageError("attack: target depth must be finite");
  }
}

int AttackConfig::resolved_iterations() const {
  return iterations > 0 ? iterations : iteration_count(epsilon);
}

int iteration_count(double epsilon) {
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw UsageError("iteration_count: epsilon must be finite and >= 0");
  }
  const double t = std::ceil(std::min(epsilon + 4.0, 1.25 * epsilon));
  return std::max(static_cast<int>(t), 1);
}

Tensor clip_to_ball(const Tensor& z, const Tensor& x, double epsilon) {
  if (!z.same_shape(x)) {
    throw DataError("clip_to_ball: " + shape_str(z.shape()) + " vs " + shape_str(x.shape()));
  }
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw UsageError("clip_to_ball: epsilon must be finite and >= 0");
  }
  Tensor out = z;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double lo = std::max(x[i] - epsilon, 0.0);
    const double hi = std::min(x[i] + epsilon, 255.0);
    out[i] = std::min(std::max(out[i], lo), hi);
  }
  return out;
}

void validate_target(const TargetSpec& target) {
  if (target.mask.rank() != 2) {
    throw DataError("target mask must be {h,w}, got " + shape_str(target.mask.shape()));
  }
  double set = 0.0;
  for (std::size_t i = 0; i < target.mask.numel(); ++i) {
    const double v = target.mask[i];
    if (v != 0.0 && v != 1.0) {
      throw DataError("target mask must be binary, found " + format_double(v));
    }
    set += v;
  }
  if (set == 0.0) throw DataError("target mask selects no pixels");
  if (!std::isfinite(target.depth)) throw DataError("target depth must be finite");
}

Tensor build_target_depth(const Tensor& clean_pred, const TargetSpec& target) {
  validate_target(target);
  if (clean_pred.numel() != target.mask.numel()) {
    throw DataError("build_target_depth: prediction " + shape_str(clean_pred.shape()) +
                    " does not cover mask " + shape_str(target.mask.shape()));
  }
  Tensor out = clean_pred;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (target.mask[i] == 1.0) out[i] = target.depth;
  }
  return out;
}

Tensor least_likely_label(const Tensor& probs) {
  if (probs.rank() != 3 || probs.dim(0) == 0) {
    throw DataError("least_likely_label: want {K,h,w}, got " + shape_str(probs.shape()));
  }
  const std::size_t k = probs.dim(0);
  const std::size_t h = probs.dim(1);
  const std::size_t w = probs.dim(2);
  Tensor out({h, w});
  for (std::size_t yy = 0; yy < h; ++yy) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (probs.at(c, yy, xx) < probs.at(best, yy, xx)) best = c;
      }
      out.at(yy, xx) = static_cast<double>(best);
    }
  }
  return out;
}

DepthL2Objective::DepthL2Objective(const DepthNet& net, Tensor target, Tensor weight)
    : session_(net), target_(std::move(target)), weight_(std::move(weight)) {}

double DepthL2Objective::loss(const Tensor& x) { return session_.loss(x, target_, weight_); }

double DepthL2Objective::loss_and_grad(const Tensor& x, Tensor& grad_x) {
  return session_.loss_and_grad(x, target_, weight_, grad_x);
}

Tensor DepthL2Objective::predict(const Tensor& x) { return session_.predict(x); }

AttackResult fgsm(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir) {
  return run_core(obj, x, cfg, dir, Method::kFgsm);
}

AttackResult ifgsm(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir) {
  return run_core(obj, x, cfg, dir, Method::kIfgsm);
}

AttackResult mifgsm(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir) {
  return run_core(obj, x, cfg, dir, Method::kMifgsm);
}

AttackResult fgsm(const DepthNet& net, const Tensor& x, const SparseDepth& y,
                  const AttackConfig& cfg, Direction dir) {
  return run_net(Method::kFgsm, net, x, y, cfg, dir);
}

AttackResult ifgsm(const DepthNet& net, const Tensor& x, const SparseDepth& y,
                   const AttackConfig& cfg, Direction dir) {
  return run_net(Method::kIfgsm, net, x, y, cfg, dir);
}

AttackResult mifgsm(const DepthNet& net, const Tensor& x, const SparseDepth& y,
                    const AttackConfig& cfg, Direction dir) {
  return run_net(Method::kMifgsm, net, x, y, cfg, dir);
}

AttackResult attack_depth(Method method, const DepthNet& craft, const DepthNet& eval,
                          const Sample& sample, const AttackConfig& cfg,
                          const TargetSpec* target) {
  cfg.validate();
  const Tensor& x = sample.rgb;
  AttackResult r;
  if (cfg.mode == AttackMode::kTargeted) {
    if (target == nullptr) throw UsageError("targeted attack needs an object mask");
    validate_target(*target);
    const Tensor composite = build_target_depth(craft.predict(x), *target);
    DepthL2Objective obj(craft, composite, Tensor::full({x.dim(1), x.dim(2)}, 1.0));
    r = run_core(obj, x, cfg, Direction::kDescend, method);
  } else {
    if (target != nullptr) {
      throw UsageError("non-targeted attack does not take an object mask");
    }
    DepthL2Objective obj(craft, sample.depth, sample.valid);
    r = run_core(obj, x, cfg, Direction::kAscend, method);
  }
  r.clean_pred = eval.predict(x);
  r.adv_pred = eval.predict(r.x_adv);
  const SparseDepth gt{sample.depth, sample.valid};
  const double clean = rmse(r.clean_pred, gt);
  const double adv = rmse(r.adv_pred, gt);
  r.metrics = cfg.mode == AttackMode::kTargeted
                  ? ratio_report(clean, adv, mmd(r.clean_pred, target->mask),
                                 mmd(r.adv_pred, target->mask))
                  : ratio_report(clean, adv);
  return r;
}

}  // namespace dav
