#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "dav/checkpoint.hpp"
#include "dav/graph.hpp"
#include "dav/scene.hpp"

namespace dav {

// Two encoder-decoder widths so transfer attacks cross genuinely different
// models: arch-A (8,16 channels), arch-B (12,24 channels).
enum class Arch { kA, kB };

const char* arch_id(Arch arch);           // "arch-A" / "arch-B"
Arch parse_arch(std::string_view id);     // accepts "arch-A", "A", "a"

// Depth regressor. Layout: x/255 -> conv3x3 s2 -> relu -> conv3x3 s2 -> relu
// -> 2 x (upsample2x -> conv3x3 -> relu) -> conv3x3 -> softplus. The head
// initializes to zero, so an untrained net predicts softplus(0)=ln 2
// everywhere; hidden layers draw Glorot-uniform weights from named seed
// streams. Input height/width must be multiples of 4.
class DepthNet {
 public:
  DepthNet(Arch arch, std::uint64_t seed);

  Arch arch() const { return arch_; }
  std::size_t param_count() const;
  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<NamedTensor>& params() { return params_; }

  // {3,h,w} in [0,255] -> strictly positive {1,h,w} meters.
  Tensor predict(const Tensor& x) const;

 private:
  Arch arch_;
  std::vector<NamedTensor> params_;
};

// Per-pixel classifier over kNumClasses; same trunk, K-channel logits head.
class SegNet {
 public:
  SegNet(Arch arch, std::uint64_t seed, int classes = kNumClasses);

  Arch arch() const { return arch_; }
  int classes() const { return classes_; }
  std::size_t param_count() const;
  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<NamedTensor>& params() { return params_; }

  Tensor logits(const Tensor& x) const;   // {K,h,w}
  Tensor predict(const Tensor& x) const;  // per-pixel probabilities, sum to 1

 private:
  Arch arch_;
  int classes_;
  std::vector<NamedTensor> params_;
};

Tensor softmax_channels(const Tensor& logits);        // {K,h,w} -> probabilities
Tensor argmax_channels(const Tensor& probs);          // {K,h,w} -> label map {h,w}
double pixel_accuracy(const Tensor& probs, const Tensor& labels);

// Reusable forward/backward program for one depth net: mean squared error
// between prediction and target over the pixels a mask selects. target and
// mask accept {h,w} or {1,h,w}. The session keeps pointers into the net's
// parameters; keep the net alive and in place.
class DepthLossSession {
 public:
  explicit DepthLossSession(const DepthNet& net);

  double loss(const Tensor& x, const Tensor& target, const Tensor& mask);
  double loss_and_grad(const Tensor& x, const Tensor& target, const Tensor& mask,
                       Tensor& grad_x);
  Tensor predict(const Tensor& x);

  Graph& graph() { return graph_; }
  NodeId loss_node() const { return loss_; }
  NodeId pred_node() const { return pred_; }

 private:
  void bind(const Tensor& x, const Tensor& target, const Tensor& mask);
  const DepthNet* net_;
  Graph graph_;
  NodeId x_ = 0, y_ = 0, m_ = 0, pred_ = 0, loss_ = 0;
  Feed feed_;
  Tensor y_hold_, m_hold_;
};

// Same idea for segmentation: mean per-pixel cross entropy against a label
// map.
class SegLossSession {
 public:
  explicit SegLossSession(const SegNet& net);

  double loss(const Tensor& x, const Tensor& labels);
  double loss_and_grad(const Tensor& x, const Tensor& labels, Tensor& grad_x);
  Tensor logits(const Tensor& x);

  Graph& graph() { return graph_; }
  NodeId loss_node() const { return loss_; }

 private:
  void bind(const Tensor& x, const Tensor& labels);
  const SegNet* net_;
  Graph graph_;
  NodeId x_ = 0, labels_ = 0, logits_node_ = 0, loss_ = 0;
  Feed feed_;
  Tensor labels_hold_;
};

struct TrainReport {
  std::size_t epochs = 0;
  double final_loss = 0.0;      // mean per-sample loss over the last epoch
  double holdout_metric = 0.0;  // RMSE (depth) or pixel accuracy (seg)
};

// Plain per-sample SGD, shuffled each epoch from the seed. Depth loss is the
// mean squared error over valid pixels; seg loss is mean cross entropy.
// Non-finite loss aborts with the epoch index.
TrainReport train_depth(DepthNet& net, const std::vector<Sample>& train_set,
                        const std::vector<Sample>& holdout, std::size_t epochs, double lr,
                        std::uint64_t seed);
TrainReport train_seg(SegNet& net, const std::vector<Sample>& train_set,
                      const std::vector<Sample>& holdout, std::size_t epochs, double lr,
                      std::uint64_t seed);

// Checkpoints: header `DAVNET <arch-id> <param-count>\n`, then one tensor
// block per parameter in layer order (see checkpoint.hpp for the encoding).
void save_depth(const std::filesystem::path& path, const DepthNet& net);
void save_seg(const std::filesystem::path& path, const SegNet& net);
DepthNet load_depth(const std::filesystem::path& path);
SegNet load_seg(const std::filesystem::path& path);

}  // namespace dav
