#pragma once

#include <string_view>
#include <vector>

#include "dav/metrics.hpp"
#include "dav/models.hpp"
#include "dav/scene.hpp"
#include "dav/tensor.hpp"

namespace dav {

enum class AttackMode { kNonTargeted, kTargeted };
enum class Direction { kAscend, kDescend };
enum class Method { kFgsm, kIfgsm, kMifgsm };

const char* mode_id(AttackMode mode);      // "non-targeted" / "targeted"
const char* method_id(Method method);      // "fgsm" / "ifgsm" / "mifgsm"
AttackMode parse_mode(std::string_view id);
Method parse_method(std::string_view id);

// Budget and stepping schedule for one attack run. epsilon 0 is allowed and
// degenerates to an identity attack; the perturbation ball is then a point.
struct AttackConfig {
  double epsilon = 16.0;  // L-inf budget, pixel units
  double alpha = 1.0;     // per-iteration step, pixel units
  int iterations = 0;     // 0 = derive from epsilon via iteration_count
  double mu = 1.0;        // momentum decay (MI-FGSM only)
  AttackMode mode = AttackMode::kNonTargeted;
  double target_depth = 100.0;  // C in meters, used when building TargetSpecs

  void validate() const;           // UsageError on out-of-range fields
  int resolved_iterations() const; // explicit count, or the epsilon rule
};

// ceil(min(eps+4, 1.25*eps)), never below one step.
int iteration_count(double epsilon);

// Elementwise min(max(z, x-eps, 0), x+eps, 255): the L-inf ball around x
// intersected with pixel range. Idempotent.
Tensor clip_to_ball(const Tensor& z, const Tensor& x, double epsilon);

// Which pixels to push, and where to. mask is {h,w} over {0,1} with at
// least one pixel set.
struct TargetSpec {
  Tensor mask;
  double depth = 100.0;  // meters
};

void validate_target(const TargetSpec& target);

// depth on masked pixels, clean_pred elsewhere. The clean prediction stands
// in for dense ground truth off-mask, so the objective is defined at every
// pixel. clean_pred may be {h,w} or {1,h,w}; the result copies its shape.
Tensor build_target_depth(const Tensor& clean_pred, const TargetSpec& target);

// Per-pixel argmin over the class axis of a {K,h,w} probability tensor;
// ties go to the lowest class index. Returns a {h,w} label map.
Tensor least_likely_label(const Tensor& probs);

// Differentiable scalar objective of the input image. Attack cores only see
// this, so tests can substitute synthetic loss fields.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual double loss(const Tensor& x) = 0;
  virtual double loss_and_grad(const Tensor& x, Tensor& grad_x) = 0;
};

// Mean squared error between a depth net's prediction and target over the
// pixels weight selects (nonzero entries count equally).
class DepthL2Objective : public Objective {
 public:
  DepthL2Objective(const DepthNet& net, Tensor target, Tensor weight);

  double loss(const Tensor& x) override;
  double loss_and_grad(const Tensor& x, Tensor& grad_x) override;
  Tensor predict(const Tensor& x);

 private:
  DepthLossSession session_;
  Tensor target_;
  Tensor weight_;
};

struct AttackResult {
  Tensor x_adv;
  Tensor clean_pred;  // {1,h,w}; empty when the core ran on a bare Objective
  Tensor adv_pred;    // {1,h,w}; same caveat
  // Objective value at every iterate, x_0 first, final iterate last
  // (length T+1; 2 for FGSM).
  std::vector<double> loss_traj;
  MetricReport metrics;  // filled by attack_depth, zero otherwise
};

// Cores: signed gradient steps against an arbitrary objective, every
// iterate clipped to the epsilon ball. Ascend climbs the loss, descend
// minimizes it. Non-finite loss or gradient raises NumericError.
AttackResult fgsm(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir);
AttackResult ifgsm(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir);
AttackResult mifgsm(Objective& obj, const Tensor& x, const AttackConfig& cfg, Direction dir);

// Depth-net fronts: y carries the regression target and the pixel weighting
// (sparse ground truth for non-targeted runs, a dense composite with an
// all-ones mask for targeted ones). Predictions come from `net`.
AttackResult fgsm(const DepthNet& net, const Tensor& x, const SparseDepth& y,
                  const AttackConfig& cfg, Direction dir);
AttackResult ifgsm(const DepthNet& net, const Tensor& x, const SparseDepth& y,
                   const AttackConfig& cfg, Direction dir);
AttackResult mifgsm(const DepthNet& net, const Tensor& x, const SparseDepth& y,
                    const AttackConfig& cfg, Direction dir);

// Whole pipeline for one sample: build the objective for cfg.mode, craft
// x_adv on `craft`, evaluate predictions and metrics on `eval` (pass the
// same net for white-box runs). Targeted mode requires a TargetSpec (its
// depth wins over cfg.target_depth) and reports MMD over its mask;
// non-targeted mode forbids one. RMSE is against the sample's sparse truth.
AttackResult attack_depth(Method method, const DepthNet& craft, const DepthNet& eval,
                          const Sample& sample, const AttackConfig& cfg,
                          const TargetSpec* target = nullptr);

}  // namespace dav
