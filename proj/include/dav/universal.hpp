#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dav/models.hpp"
#include "dav/scene.hpp"
#include "dav/tensor.hpp"

namespace dav {

// One perturbation for a whole image distribution. delta rides along with
// the budget it was trained under and a digest of the training recipe.
struct UniversalPerturbation {
  Tensor delta;          // {3,h,w}, every entry within [-epsilon, epsilon]
  double epsilon = 0.0;
  std::string digest;    // "wd=...,ws=...,gamma=...," config summary
};

struct MultiTaskWeights {
  double depth = 1.0;
  double semantic = 0.0;

  void validate() const;  // both >= 0, finite, sum > 0
};

// w_depth*|L_depth| + w_semantic*|L_semantic|.
double multitask_loss(double l_depth, double l_semantic, const MultiTaskWeights& w);

// Each task gradient L1-normalized (floor 1e-12), then weighted-summed. A
// task with zero weight may pass an empty tensor; otherwise shapes must
// match.
Tensor multitask_gradient(const Tensor& g_depth, const Tensor& g_semantic,
                          const MultiTaskWeights& w);

enum class DeltaInit { kRandom, kZero };     // uniform in [-eps, eps], or all zero
enum class BatchInit { kApplyDelta, kPlain };  // start inner loop at clip(x+delta) or x

struct UniversalTrainConfig {
  double epsilon = 16.0;
  double gamma = 1.0;        // delta learning rate
  double alpha = 1.0;        // inner iterate step, pixel units
  double mu = 1.0;           // momentum decay
  std::size_t epochs = 2;
  int inner_iterations = 10;  // T
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
  DeltaInit init = DeltaInit::kRandom;
  BatchInit batch_init = BatchInit::kApplyDelta;

  void validate() const;  // UsageError on out-of-range fields
};

// Bookkeeping the trainer fills when asked: the combined task loss at the
// last inner iteration of each minibatch, plus evaluation counters (the seg
// counter must stay zero in single-task runs).
struct UniversalTrainStats {
  std::vector<double> batch_loss;
  std::size_t depth_evals = 0;
  std::size_t seg_evals = 0;
  std::size_t minibatches = 0;
};

// Minibatched momentum ascent of the multi-task objective: per image, T
// signed steps from the batch-shared momentum direction, each clipped to
// the epsilon ball of its clean image; delta then moves by gamma times the
// batch-mean inner perturbation and is projected back onto the ball.
// Depth ascends its masked RMSE; segmentation descends toward the least
// likely labels of the clean images (gradient negated before combination).
// seg may be null when w.semantic is zero and is never evaluated then.
UniversalPerturbation train_universal(const DepthNet& depth, const SegNet* seg,
                                      const std::vector<Sample>& data,
                                      const UniversalTrainConfig& cfg, const MultiTaskWeights& w,
                                      UniversalTrainStats* stats = nullptr);

// clip(x + delta) into [0,255]; the same delta for every image.
Tensor apply_universal(const Tensor& x, const UniversalPerturbation& up);

// Binary file: `DAVUAP <epsilon> <digest>\n` then one "delta" tensor block.
void save_universal(const std::filesystem::path& path, const UniversalPerturbation& up);
UniversalPerturbation load_universal(const std::filesystem::path& path);

}  // namespace dav
