#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dav/tensor.hpp"

namespace dav {

// Reverse-mode autodiff over a fixed primitive set. A Graph is a reusable
// program: build it once, then run forward() with fresh input bindings as
// often as needed. Every node's inputs precede it, so forward runs the node
// list front to back and backward runs it back to front. All inner loops
// have a fixed iteration order, which makes gradients bit-reproducible.

using NodeId = std::size_t;

enum class OpKind {
  kInput,
  kConv2d,       // 3x3-style odd kernel, zero padding, stride 1 or 2
  kRelu,
  kSoftplus,
  kUpsample2x,   // nearest neighbour
  kAdd,
  kScale,        // multiply by a fixed scalar
  kMaskedSumSquares,
  kSoftmaxXentPerPixel,
  kReduceMean,
};

const char* op_name(OpKind kind);

// Name -> tensor bindings for a forward pass. Holds pointers; the caller
// keeps the tensors alive for the duration of the pass.
class Feed {
 public:
  void set(std::string name, const Tensor& t);
  const Tensor* find(std::string_view name) const;

 private:
  std::vector<std::pair<std::string, const Tensor*>> entries_;
};

class Graph {
 public:
  NodeId input(std::string name);
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, int stride);
  NodeId relu(NodeId x);
  NodeId softplus(NodeId x);
  NodeId upsample2x(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId masked_sum_squares(NodeId z, NodeId mask);
  NodeId softmax_xent_per_pixel(NodeId logits, NodeId labels);
  NodeId reduce_mean(NodeId x);

  std::size_t node_count() const { return nodes_.size(); }

  // Executes every node in construction order; returns the terminal value.
  // Rejects missing bindings, shape mismatches (naming the offending node)
  // and non-finite inputs.
  const Tensor& forward(const Feed& inputs);

  const Tensor& value(NodeId id) const;

  // Accumulates d(loss)/d(node) for every node. Loss must be scalar and
  // forward must have run. Gradients stay valid until the next forward.
  void backward(NodeId loss);

  const Tensor& grad(NodeId id) const;

  // Convenience for the common question: d(loss)/d(named input).
  Tensor input_gradient(NodeId loss, std::string_view input_name);

  NodeId node_of_input(std::string_view name) const;

  // Hash of the sign pattern at every relu input, taken from the last
  // forward. Two runs that disagree here straddled a relu kink.
  std::uint64_t relu_sign_digest() const;

 private:
  struct Node {
    OpKind kind;
    std::array<NodeId, 3> args{};
    int nargs = 0;
    int stride = 1;      // conv2d
    double factor = 1.0; // scale
    std::string name;    // input
    const Tensor* bound = nullptr;  // input binding for the current pass
    Tensor value;
    Tensor grad;
  };

  NodeId push(Node node);
  const Tensor& val_of(const Node& n) const {
    return n.kind == OpKind::kInput ? *n.bound : n.value;
  }
  void check_arg(NodeId id, const char* op) const;
  [[noreturn]] void fail_shape(NodeId id, const std::string& detail) const;

  void run_node(NodeId id);
  void back_node(NodeId id);

  std::vector<Node> nodes_;
  bool ran_forward_ = false;
  bool ran_backward_ = false;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

// Central-difference probe of d(loss)/d(input) at the given flat coordinates.
// Relative error per coordinate is |analytic - numeric| / max(|analytic|, 1e-8).
// Coordinates whose +h/-h passes land on different relu sign patterns are
// skipped; a finite difference across a kink measures nothing useful.
FdReport finite_difference_check(Graph& graph, const Feed& inputs, NodeId loss,
                                 std::string_view input_name,
                                 std::span<const std::size_t> coords, double h);

}  // namespace dav
