#include "dav/graph.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dav/error.hpp"

namespace dav {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kUpsample2x: return "upsample2x";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kMaskedSumSquares: return "masked-sum-squares";
    case OpKind::kSoftmaxXentPerPixel: return "softmax-xent-per-pixel";
    case OpKind::kReduceMean: return "reduce-mean";
  }
  return "?";
}

void Feed::set(std::string name, const Tensor& t) {
  for (auto& [n, p] : entries_) {
    if (n == name) {
      p = &t;
      return;
    }
  }
  entries_.emplace_back(std::move(name), &t);
}

const Tensor* Feed::find(std::string_view name) const {
  for (const auto& [n, p] : entries_) {
    if (n == name) return p;
  }
  return nullptr;
}

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  ran_forward_ = false;
  ran_backward_ = false;
  return nodes_.size() - 1;
}

void Graph::check_arg(NodeId id, const char* op) const {
  if (id >= nodes_.size()) {
    throw DataError(std::string(op) + ": argument node " + std::to_string(id) +
                    " does not exist yet");
  }
}

[[noreturn]] void Graph::fail_shape(NodeId id, const std::string& detail) const {
  throw DataError("node " + std::to_string(id) + " (" + op_name(nodes_[id].kind) +
                  "): " + detail);
}

NodeId Graph::input(std::string name) {
  for (const Node& n : nodes_) {
    if (n.kind == OpKind::kInput && n.name == name) {
      throw DataError("duplicate input name '" + name + "'");
    }
  }
  Node n;
  n.kind = OpKind::kInput;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId weight, NodeId bias, int stride) {
  check_arg(x, "conv2d");
  check_arg(weight, "conv2d");
  check_arg(bias, "conv2d");
  if (stride != 1 && stride != 2) throw DataError("conv2d stride must be 1 or 2");
  Node n;
  n.kind = OpKind::kConv2d;
  n.args = {x, weight, bias};
  n.nargs = 3;
  n.stride = stride;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  check_arg(x, "relu");
  Node n;
  n.kind = OpKind::kRelu;
  n.args = {x, 0, 0};
  n.nargs = 1;
  return push(std::move(n));
}

NodeId Graph::softplus(NodeId x) {
  check_arg(x, "softplus");
  Node n;
  n.kind = OpKind::kSoftplus;
  n.args = {x, 0, 0};
  n.nargs = 1;
  return push(std::move(n));
}

NodeId Graph::upsample2x(NodeId x) {
  check_arg(x, "upsample2x");
  Node n;
  n.kind = OpKind::kUpsample2x;
  n.args = {x, 0, 0};
  n.nargs = 1;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_arg(a, "add");
  check_arg(b, "add");
  Node n;
  n.kind = OpKind::kAdd;
  n.args = {a, b, 0};
  n.nargs = 2;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  check_arg(x, "scale");
  Node n;
  n.kind = OpKind::kScale;
  n.args = {x, 0, 0};
  n.nargs = 1;
  n.factor = factor;
  return push(std::move(n));
}

NodeId Graph::masked_sum_squares(NodeId z, NodeId mask) {
  check_arg(z, "masked_sum_squares");
  check_arg(mask, "masked_sum_squares");
  Node n;
  n.kind = OpKind::kMaskedSumSquares;
  n.args = {z, mask, 0};
  n.nargs = 2;
  return push(std::move(n));
}

NodeId Graph::softmax_xent_per_pixel(NodeId logits, NodeId labels) {
  check_arg(logits, "softmax_xent_per_pixel");
  check_arg(labels, "softmax_xent_per_pixel");
  Node n;
  n.kind = OpKind::kSoftmaxXentPerPixel;
  n.args = {logits, labels, 0};
  n.nargs = 2;
  return push(std::move(n));
}

NodeId Graph::reduce_mean(NodeId x) {
  check_arg(x, "reduce_mean");
  Node n;
  n.kind = OpKind::kReduceMean;
  n.args = {x, 0, 0};
  n.nargs = 1;
  return push(std::move(n));
}

namespace {

// Reuse the existing buffer when the shape already matches.
void ensure_shape(Tensor& t, const Shape& shape) {
  if (t.shape() != shape) t = Tensor(shape);
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// First/last output index whose sampled input index lands inside [0, in_dim).
// in = out * stride + k - pad.
inline void conv_range(std::ptrdiff_t out_dim, std::ptrdiff_t in_dim, std::ptrdiff_t stride,
                       std::ptrdiff_t k, std::ptrdiff_t pad, std::ptrdiff_t& lo,
                       std::ptrdiff_t& hi) {
  lo = 0;
  while (lo < out_dim && lo * stride + k - pad < 0) ++lo;
  hi = out_dim - 1;
  while (hi >= 0 && hi * stride + k - pad >= in_dim) --hi;
}

}  // namespace

void Graph::run_node(NodeId id) {
  Node& n = nodes_[id];
  switch (n.kind) {
    case OpKind::kInput:
      return;

    case OpKind::kConv2d: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      const Tensor& w = val_of(nodes_[n.args[1]]);
      const Tensor& b = val_of(nodes_[n.args[2]]);
      if (x.rank() != 3) fail_shape(id, "image must be rank 3, got " + shape_str(x.shape()));
      if (w.rank() != 4) fail_shape(id, "weight must be rank 4, got " + shape_str(w.shape()));
      if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
        fail_shape(id, "kernel must be square with odd size, got " + shape_str(w.shape()));
      }
      if (w.dim(1) != x.dim(0)) {
        fail_shape(id, "weight expects " + std::to_string(w.dim(1)) + " input channels, image has " +
                        std::to_string(x.dim(0)));
      }
      if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
        fail_shape(id, "bias must be {" + std::to_string(w.dim(0)) + "}, got " +
                        shape_str(b.shape()));
      }
      const std::ptrdiff_t C = static_cast<std::ptrdiff_t>(x.dim(0));
      const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(x.dim(1));
      const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(x.dim(2));
      const std::ptrdiff_t O = static_cast<std::ptrdiff_t>(w.dim(0));
      const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(w.dim(2));
      const std::ptrdiff_t P = (K - 1) / 2;
      const std::ptrdiff_t S = n.stride;
      const std::ptrdiff_t Ho = (H + 2 * P - K) / S + 1;
      const std::ptrdiff_t Wo = (W + 2 * P - K) / S + 1;
      if (Ho <= 0 || Wo <= 0) fail_shape(id, "image too small for kernel");
      ensure_shape(n.value, {static_cast<std::size_t>(O), static_cast<std::size_t>(Ho),
                             static_cast<std::size_t>(Wo)});
      double* out = n.value.data();
      const double* xp = x.data();
      const double* wp = w.data();
      for (std::ptrdiff_t o = 0; o < O; ++o) {
        double* out_o = out + o * Ho * Wo;
        const double bo = b[static_cast<std::size_t>(o)];
        for (std::ptrdiff_t i = 0; i < Ho * Wo; ++i) out_o[i] = bo;
        for (std::ptrdiff_t c = 0; c < C; ++c) {
          const double* x_c = xp + c * H * W;
          const double* w_oc = wp + (o * C + c) * K * K;
          for (std::ptrdiff_t ky = 0; ky < K; ++ky) {
            std::ptrdiff_t oy_lo, oy_hi;
            conv_range(Ho, H, S, ky, P, oy_lo, oy_hi);
            for (std::ptrdiff_t kx = 0; kx < K; ++kx) {
              const double wv = w_oc[ky * K + kx];
              std::ptrdiff_t ox_lo, ox_hi;
              conv_range(Wo, W, S, kx, P, ox_lo, ox_hi);
              for (std::ptrdiff_t oy = oy_lo; oy <= oy_hi; ++oy) {
                const std::ptrdiff_t iy = oy * S + ky - P;
                double* out_row = out_o + oy * Wo;
                const double* x_row = x_c + iy * W + (kx - P);
                if (S == 1) {
                  for (std::ptrdiff_t ox = ox_lo; ox <= ox_hi; ++ox) {
                    out_row[ox] += wv * x_row[ox];
                  }
                } else {
                  for (std::ptrdiff_t ox = ox_lo; ox <= ox_hi; ++ox) {
                    out_row[ox] += wv * x_row[ox * S];
                  }
                }
              }
            }
          }
        }
      }
      return;
    }

    case OpKind::kRelu: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      ensure_shape(n.value, x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) n.value[i] = x[i] > 0 ? x[i] : 0.0;
      return;
    }

    case OpKind::kSoftplus: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      ensure_shape(n.value, x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) n.value[i] = stable_softplus(x[i]);
      return;
    }

    case OpKind::kUpsample2x: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      if (x.rank() != 3) fail_shape(id, "expects rank 3, got " + shape_str(x.shape()));
      const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
      ensure_shape(n.value, {C, 2 * H, 2 * W});
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < 2 * H; ++y) {
          const double* src = x.data() + (c * H + y / 2) * W;
          double* dst = n.value.data() + (c * 2 * H + y) * 2 * W;
          for (std::size_t xq = 0; xq < 2 * W; ++xq) dst[xq] = src[xq / 2];
        }
      }
      return;
    }

    case OpKind::kAdd: {
      const Tensor& a = val_of(nodes_[n.args[0]]);
      const Tensor& b = val_of(nodes_[n.args[1]]);
      if (!a.same_shape(b)) {
        fail_shape(id, "operand shapes differ: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
      }
      ensure_shape(n.value, a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] + b[i];
      return;
    }

    case OpKind::kScale: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      ensure_shape(n.value, x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) n.value[i] = n.factor * x[i];
      return;
    }

    case OpKind::kMaskedSumSquares: {
      const Tensor& z = val_of(nodes_[n.args[0]]);
      const Tensor& m = val_of(nodes_[n.args[1]]);
      if (!z.same_shape(m)) {
        fail_shape(id, "mask shape " + shape_str(m.shape()) + " does not match value shape " +
                        shape_str(z.shape()));
      }
      ensure_shape(n.value, {1});
      double s = 0.0;
      for (std::size_t i = 0; i < z.numel(); ++i) s += m[i] * z[i] * z[i];
      n.value[0] = s;
      return;
    }

    case OpKind::kSoftmaxXentPerPixel: {
      const Tensor& logits = val_of(nodes_[n.args[0]]);
      const Tensor& labels = val_of(nodes_[n.args[1]]);
      if (logits.rank() != 3) {
        fail_shape(id, "logits must be rank 3, got " + shape_str(logits.shape()));
      }
      const std::size_t K = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
      if (labels.rank() != 2 || labels.dim(0) != H || labels.dim(1) != W) {
        fail_shape(id, "labels must be {" + std::to_string(H) + "," + std::to_string(W) +
                        "}, got " + shape_str(labels.shape()));
      }
      ensure_shape(n.value, {H, W});
      const std::size_t hw = H * W;
      for (std::size_t p = 0; p < hw; ++p) {
        const double yv = labels[p];
        const std::size_t y = static_cast<std::size_t>(yv);
        if (yv != std::floor(yv) || yv < 0 || y >= K) {
          fail_shape(id, "label at pixel " + std::to_string(p) + " is not a class index below " +
                          std::to_string(K));
        }
        double mx = logits[p];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits[k * hw + p]);
        double lse = 0.0;
        for (std::size_t k = 0; k < K; ++k) lse += std::exp(logits[k * hw + p] - mx);
        n.value[p] = std::log(lse) - (logits[y * hw + p] - mx);
      }
      return;
    }

    case OpKind::kReduceMean: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      ensure_shape(n.value, {1});
      double s = 0.0;
      for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
      n.value[0] = s / static_cast<double>(x.numel());
      return;
    }
  }
}

const Tensor& Graph::forward(const Feed& inputs) {
  if (nodes_.empty()) throw DataError("forward on an empty graph");
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.kind != OpKind::kInput) continue;
    const Tensor* t = inputs.find(n.name);
    if (!t) throw DataError("input '" + n.name + "' not bound");
    if (!t->all_finite()) throw NumericError("input '" + n.name + "' contains non-finite values");
    n.bound = t;
  }
  for (NodeId id = 0; id < nodes_.size(); ++id) run_node(id);
  ran_forward_ = true;
  ran_backward_ = false;
  return val_of(nodes_.back());
}

const Tensor& Graph::value(NodeId id) const {
  if (!ran_forward_) throw DataError("value() before forward()");
  check_arg(id, "value");
  return val_of(nodes_[id]);
}

void Graph::back_node(NodeId id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  switch (n.kind) {
    case OpKind::kInput:
      return;

    case OpKind::kConv2d: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      const Tensor& w = val_of(nodes_[n.args[1]]);
      Tensor& dx = nodes_[n.args[0]].grad;
      Tensor& dw = nodes_[n.args[1]].grad;
      Tensor& db = nodes_[n.args[2]].grad;
      const std::ptrdiff_t C = static_cast<std::ptrdiff_t>(x.dim(0));
      const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(x.dim(1));
      const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(x.dim(2));
      const std::ptrdiff_t O = static_cast<std::ptrdiff_t>(w.dim(0));
      const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(w.dim(2));
      const std::ptrdiff_t P = (K - 1) / 2;
      const std::ptrdiff_t S = n.stride;
      const std::ptrdiff_t Ho = static_cast<std::ptrdiff_t>(n.value.dim(1));
      const std::ptrdiff_t Wo = static_cast<std::ptrdiff_t>(n.value.dim(2));
      const double* gp = g.data();
      const double* xp = x.data();
      const double* wp = w.data();
      for (std::ptrdiff_t o = 0; o < O; ++o) {
        const double* g_o = gp + o * Ho * Wo;
        double acc_b = 0.0;
        for (std::ptrdiff_t i = 0; i < Ho * Wo; ++i) acc_b += g_o[i];
        db[static_cast<std::size_t>(o)] += acc_b;
        for (std::ptrdiff_t c = 0; c < C; ++c) {
          const double* x_c = xp + c * H * W;
          double* dx_c = dx.data() + c * H * W;
          const double* w_oc = wp + (o * C + c) * K * K;
          double* dw_oc = dw.data() + (o * C + c) * K * K;
          for (std::ptrdiff_t ky = 0; ky < K; ++ky) {
            std::ptrdiff_t oy_lo, oy_hi;
            conv_range(Ho, H, S, ky, P, oy_lo, oy_hi);
            for (std::ptrdiff_t kx = 0; kx < K; ++kx) {
              const double wv = w_oc[ky * K + kx];
              double acc_w = 0.0;
              std::ptrdiff_t ox_lo, ox_hi;
              conv_range(Wo, W, S, kx, P, ox_lo, ox_hi);
              for (std::ptrdiff_t oy = oy_lo; oy <= oy_hi; ++oy) {
                const std::ptrdiff_t iy = oy * S + ky - P;
                const double* g_row = g_o + oy * Wo;
                const double* x_row = x_c + iy * W + (kx - P);
                double* dx_row = dx_c + iy * W + (kx - P);
                if (S == 1) {
                  for (std::ptrdiff_t ox = ox_lo; ox <= ox_hi; ++ox) {
                    acc_w += g_row[ox] * x_row[ox];
                    dx_row[ox] += wv * g_row[ox];
                  }
                } else {
                  for (std::ptrdiff_t ox = ox_lo; ox <= ox_hi; ++ox) {
                    acc_w += g_row[ox] * x_row[ox * S];
                    dx_row[ox * S] += wv * g_row[ox];
                  }
                }
              }
              dw_oc[ky * K + kx] += acc_w;
            }
          }
        }
      }
      return;
    }

    case OpKind::kRelu: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      Tensor& dx = nodes_[n.args[0]].grad;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x[i] > 0) dx[i] += g[i];
      }
      return;
    }

    case OpKind::kSoftplus: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      Tensor& dx = nodes_[n.args[0]].grad;
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += sigmoid(x[i]) * g[i];
      return;
    }

    case OpKind::kUpsample2x: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      Tensor& dx = nodes_[n.args[0]].grad;
      const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < 2 * H; ++y) {
          const double* g_row = g.data() + (c * 2 * H + y) * 2 * W;
          double* dx_row = dx.data() + (c * H + y / 2) * W;
          for (std::size_t xq = 0; xq < 2 * W; ++xq) dx_row[xq / 2] += g_row[xq];
        }
      }
      return;
    }

    case OpKind::kAdd: {
      Tensor& da = nodes_[n.args[0]].grad;
      Tensor& db = nodes_[n.args[1]].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
      for (std::size_t i = 0; i < g.numel(); ++i) db[i] += g[i];
      return;
    }

    case OpKind::kScale: {
      Tensor& dx = nodes_[n.args[0]].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += n.factor * g[i];
      return;
    }

    case OpKind::kMaskedSumSquares: {
      const Tensor& z = val_of(nodes_[n.args[0]]);
      const Tensor& m = val_of(nodes_[n.args[1]]);
      Tensor& dz = nodes_[n.args[0]].grad;
      Tensor& dm = nodes_[n.args[1]].grad;
      const double g0 = g[0];
      for (std::size_t i = 0; i < z.numel(); ++i) dz[i] += 2.0 * m[i] * z[i] * g0;
      for (std::size_t i = 0; i < z.numel(); ++i) dm[i] += z[i] * z[i] * g0;
      return;
    }

    case OpKind::kSoftmaxXentPerPixel: {
      // labels carry no gradient; they are class indices.
      const Tensor& logits = val_of(nodes_[n.args[0]]);
      const Tensor& labels = val_of(nodes_[n.args[1]]);
      Tensor& dl = nodes_[n.args[0]].grad;
      const std::size_t K = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
      const std::size_t hw = H * W;
      for (std::size_t p = 0; p < hw; ++p) {
        const double gp = g[p];
        const std::size_t y = static_cast<std::size_t>(labels[p]);
        double mx = logits[p];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits[k * hw + p]);
        double lse = 0.0;
        for (std::size_t k = 0; k < K; ++k) lse += std::exp(logits[k * hw + p] - mx);
        for (std::size_t k = 0; k < K; ++k) {
          const double soft = std::exp(logits[k * hw + p] - mx) / lse;
          dl[k * hw + p] += (soft - (k == y ? 1.0 : 0.0)) * gp;
        }
      }
      return;
    }

    case OpKind::kReduceMean: {
      const Tensor& x = val_of(nodes_[n.args[0]]);
      Tensor& dx = nodes_[n.args[0]].grad;
      const double gs = g[0] / static_cast<double>(x.numel());
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += gs;
      return;
    }
  }
}

void Graph::backward(NodeId loss) {
  if (!ran_forward_) throw DataError("backward() before forward()");
  check_arg(loss, "backward");
  if (val_of(nodes_[loss]).numel() != 1) {
    throw DataError("backward: loss node " + std::to_string(loss) + " is not scalar, shape " +
                    shape_str(val_of(nodes_[loss]).shape()));
  }
  for (Node& n : nodes_) {
    const Shape& s = val_of(n).shape();
    if (n.grad.shape() != s) {
      n.grad = Tensor(s);
    } else {
      n.grad.fill(0.0);
    }
  }
  nodes_[loss].grad[0] = 1.0;
  for (NodeId id = loss + 1; id-- > 0;) back_node(id);
  ran_backward_ = true;
}

const Tensor& Graph::grad(NodeId id) const {
  if (!ran_backward_) throw DataError("grad() before backward()");
  check_arg(id, "grad");
  return nodes_[id].grad;
}

NodeId Graph::node_of_input(std::string_view name) const {
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].kind == OpKind::kInput && nodes_[id].name == name) return id;
  }
  throw DataError("no input named '" + std::string(name) + "'");
}

Tensor Graph::input_gradient(NodeId loss, std::string_view input_name) {
  const NodeId node = node_of_input(input_name);
  backward(loss);
  return nodes_[node].grad;
}

std::uint64_t Graph::relu_sign_digest() const {
  if (!ran_forward_) throw DataError("relu_sign_digest() before forward()");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::kRelu) continue;
    const Tensor& x = val_of(nodes_[n.args[0]]);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      h ^= static_cast<std::uint64_t>(x[i] > 0);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

FdReport finite_difference_check(Graph& graph, const Feed& inputs, NodeId loss,
                                 std::string_view input_name,
                                 std::span<const std::size_t> coords, double h) {
  if (h <= 0) throw DataError("finite_difference_check: h must be positive");
  const Tensor* base = inputs.find(input_name);
  if (!base) throw DataError("finite_difference_check: input '" + std::string(input_name) +
                             "' not in feed");
  graph.forward(inputs);
  graph.backward(loss);
  const Tensor analytic = graph.grad(graph.node_of_input(input_name));

  Tensor probe = *base;
  Feed feed = inputs;
  feed.set(std::string(input_name), probe);

  FdReport report;
  for (std::size_t coord : coords) {
    if (coord >= probe.numel()) {
      throw DataError("finite_difference_check: coordinate " + std::to_string(coord) +
                      " out of range");
    }
    const double saved = probe[coord];
    probe[coord] = saved + h;
    graph.forward(feed);
    const double lp = graph.value(loss)[0];
    const std::uint64_t dp = graph.relu_sign_digest();
    probe[coord] = saved - h;
    graph.forward(feed);
    const double lm = graph.value(loss)[0];
    const std::uint64_t dm = graph.relu_sign_digest();
    probe[coord] = saved;
    if (dp != dm) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = analytic[coord];
    const double rel = std::abs(a - numeric) / std::max(std::abs(a), 1e-8);
    report.max_rel_err = std::max(report.max_rel_err, rel);
    ++report.checked;
  }
  // Leave the graph evaluated at the unperturbed inputs.
  graph.forward(inputs);
  return report;
}

}  // namespace dav
