#include "dav/models.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dav/error.hpp"
#include "dav/metrics.hpp"
#include "dav/rng.hpp"

namespace dav {

const char* arch_id(Arch arch) { return arch == Arch::kA ? "arch-A" : "arch-B"; }

Arch parse_arch(std::string_view id) {
  if (id == "arch-A" || id == "A" || id == "a") return Arch::kA;
  if (id == "arch-B" || id == "B" || id == "b") return Arch::kB;
  throw DataError("unknown architecture '" + std::string(id) + "'");
}

namespace {

struct Widths {
  std::size_t c1, c2;
};

Widths widths_of(Arch arch) { return arch == Arch::kA ? Widths{8, 16} : Widths{12, 24}; }

// Layer schema: name, {out,in} channels, whether Glorot-initialized.
struct LayerSpec {
  const char* name;
  std::size_t out_c, in_c;
  bool glorot;
};

std::vector<LayerSpec> layer_specs(Arch arch, std::size_t head_out) {
  const Widths w = widths_of(arch);
  return {
      {"enc1", w.c1, 3, true},
      {"enc2", w.c2, w.c1, true},
      {"dec1", w.c1, w.c2, true},
      {"dec2", w.c1, w.c1, true},
      {"head", head_out, w.c1, false},
  };
}

std::vector<NamedTensor> init_params(Arch arch, std::size_t head_out, std::uint64_t seed) {
  std::vector<NamedTensor> params;
  for (const LayerSpec& l : layer_specs(arch, head_out)) {
    NamedTensor w;
    w.name = std::string(l.name) + ".w";
    w.value = Tensor({l.out_c, l.in_c, 3, 3});
    if (l.glorot) {
      Rng rng(seed_stream(seed, "init/" + w.name));
      const double fan_in = static_cast<double>(l.in_c) * 9.0;
      const double fan_out = static_cast<double>(l.out_c) * 9.0;
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t i = 0; i < w.value.numel(); ++i) {
        w.value[i] = rng.uniform(-limit, limit);
      }
    }
    params.push_back(std::move(w));
    NamedTensor b;
    b.name = std::string(l.name) + ".b";
    b.value = Tensor({l.out_c});
    params.push_back(std::move(b));
  }
  return params;
}

std::size_t count_scalars(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const NamedTensor& p : params) n += p.value.numel();
  return n;
}

// Shared trunk + head logits; returns the head output node (pre-activation).
struct TrunkNodes {
  NodeId x;
  NodeId head;
};

TrunkNodes wire_trunk(Graph& g) {
  TrunkNodes t;
  t.x = g.input("x");
  const NodeId x_norm = g.scale(t.x, 1.0 / 255.0);
  const NodeId e1 = g.relu(g.conv2d(x_norm, g.input("enc1.w"), g.input("enc1.b"), 2));
  const NodeId e2 = g.relu(g.conv2d(e1, g.input("enc2.w"), g.input("enc2.b"), 2));
  const NodeId d1 = g.relu(g.conv2d(g.upsample2x(e2), g.input("dec1.w"), g.input("dec1.b"), 1));
  const NodeId d2 = g.relu(g.conv2d(g.upsample2x(d1), g.input("dec2.w"), g.input("dec2.b"), 1));
  t.head = g.conv2d(d2, g.input("head.w"), g.input("head.b"), 1);
  return t;
}

void bind_params(Feed& feed, const std::vector<NamedTensor>& params) {
  for (const NamedTensor& p : params) feed.set(p.name, p.value);
}

void check_image(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) != 3) {
    throw DataError("expected an image {3,h,w}, got " + shape_str(x.shape()));
  }
  if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0 || x.dim(1) < 8 || x.dim(2) < 8) {
    throw DataError("image sides must be multiples of 4 and at least 8, got " +
                    shape_str(x.shape()));
  }
}

// One-off forward for the prediction APIs; sessions are the hot path.
Tensor run_once(const std::vector<NamedTensor>& params, const Tensor& x, bool depth_head) {
  check_image(x);
  Graph g;
  const TrunkNodes t = wire_trunk(g);
  const NodeId out = depth_head ? g.softplus(t.head) : t.head;
  Feed feed;
  bind_params(feed, params);
  feed.set("x", x);
  g.forward(feed);
  return g.value(out);
}

// {h,w} or {1,h,w} -> {1,h,w}
Tensor as_chw(const Tensor& t) {
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  if (t.rank() == 3 && t.dim(0) == 1) return t;
  throw DataError("expected {h,w} or {1,h,w}, got " + shape_str(t.shape()));
}

Tensor as_hw(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  throw DataError("expected {h,w} or {1,h,w}, got " + shape_str(t.shape()));
}

}  // namespace

DepthNet::DepthNet(Arch arch, std::uint64_t seed)
    : arch_(arch), params_(init_params(arch, 1, seed)) {}

std::size_t DepthNet::param_count() const { return count_scalars(params_); }

Tensor DepthNet::predict(const Tensor& x) const { return run_once(params_, x, true); }

SegNet::SegNet(Arch arch, std::uint64_t seed, int classes)
    : arch_(arch), classes_(classes), params_(init_params(arch, classes, seed)) {
  if (classes < 2) throw DataError("segmentation needs at least 2 classes");
}

std::size_t SegNet::param_count() const { return count_scalars(params_); }

Tensor SegNet::logits(const Tensor& x) const { return run_once(params_, x, false); }

Tensor SegNet::predict(const Tensor& x) const { return softmax_channels(logits(x)); }

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) {
    throw DataError("softmax_channels expects {K,h,w}, got " + shape_str(logits.shape()));
  }
  const std::size_t K = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  Tensor probs(logits.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = logits[p];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits[k * hw + p]);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double e = std::exp(logits[k * hw + p] - mx);
      probs[k * hw + p] = e;
      sum += e;
    }
    for (std::size_t k = 0; k < K; ++k) probs[k * hw + p] /= sum;
  }
  return probs;
}

Tensor argmax_channels(const Tensor& probs) {
  if (probs.rank() != 3) {
    throw DataError("argmax_channels expects {K,h,w}, got " + shape_str(probs.shape()));
  }
  const std::size_t K = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  Tensor labels({probs.dim(1), probs.dim(2)});
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (probs[k * hw + p] > probs[best * hw + p]) best = k;
    }
    labels[p] = static_cast<double>(best);
  }
  return labels;
}

double pixel_accuracy(const Tensor& probs, const Tensor& labels) {
  const Tensor pred = argmax_channels(probs);
  if (pred.numel() != labels.numel()) {
    throw DataError("pixel_accuracy: prediction " + shape_str(pred.shape()) + " vs labels " +
                    shape_str(labels.shape()));
  }
  double hit = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) hit += pred[i] == labels[i];
  return hit / static_cast<double>(pred.numel());
}

DepthLossSession::DepthLossSession(const DepthNet& net) : net_(&net) {
  const TrunkNodes t = wire_trunk(graph_);
  x_ = t.x;
  pred_ = graph_.softplus(t.head);
  y_ = graph_.input("y");
  m_ = graph_.input("m");
  const NodeId diff = graph_.add(pred_, graph_.scale(y_, -1.0));
  loss_ = graph_.masked_sum_squares(diff, m_);
  bind_params(feed_, net_->params());
}

void DepthLossSession::bind(const Tensor& x, const Tensor& target, const Tensor& mask) {
  check_image(x);
  y_hold_ = as_chw(target);
  Tensor m = as_chw(mask);
  double count = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) count += m[i] != 0.0;
  if (count == 0.0) throw DataError("depth loss: mask selects no pixels");
  // Baking 1/count into the mask makes masked_sum_squares a mean, so the
  // loss scale does not depend on how many pixels are annotated.
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] = m[i] != 0.0 ? 1.0 / count : 0.0;
  m_hold_ = std::move(m);
  feed_.set("x", x);
  feed_.set("y", y_hold_);
  feed_.set("m", m_hold_);
}

double DepthLossSession::loss(const Tensor& x, const Tensor& target, const Tensor& mask) {
  bind(x, target, mask);
  graph_.forward(feed_);
  return graph_.value(loss_)[0];
}

double DepthLossSession::loss_and_grad(const Tensor& x, const Tensor& target, const Tensor& mask,
                                       Tensor& grad_x) {
  const double l = loss(x, target, mask);
  graph_.backward(loss_);
  grad_x = graph_.grad(x_);
  return l;
}

Tensor DepthLossSession::predict(const Tensor& x) {
  check_image(x);
  y_hold_ = Tensor({1, x.dim(1), x.dim(2)});
  m_hold_ = Tensor::full({1, x.dim(1), x.dim(2)}, 1.0 / static_cast<double>(x.dim(1) * x.dim(2)));
  feed_.set("x", x);
  feed_.set("y", y_hold_);
  feed_.set("m", m_hold_);
  graph_.forward(feed_);
  return graph_.value(pred_);
}

SegLossSession::SegLossSession(const SegNet& net) : net_(&net) {
  const TrunkNodes t = wire_trunk(graph_);
  x_ = t.x;
  logits_node_ = t.head;
  labels_ = graph_.input("labels");
  loss_ = graph_.reduce_mean(graph_.softmax_xent_per_pixel(logits_node_, labels_));
  bind_params(feed_, net_->params());
}

void SegLossSession::bind(const Tensor& x, const Tensor& labels) {
  check_image(x);
  labels_hold_ = as_hw(labels);
  feed_.set("x", x);
  feed_.set("labels", labels_hold_);
}

double SegLossSession::loss(const Tensor& x, const Tensor& labels) {
  bind(x, labels);
  graph_.forward(feed_);
  return graph_.value(loss_)[0];
}

double SegLossSession::loss_and_grad(const Tensor& x, const Tensor& labels, Tensor& grad_x) {
  const double l = loss(x, labels);
  graph_.backward(loss_);
  grad_x = graph_.grad(x_);
  return l;
}

Tensor SegLossSession::logits(const Tensor& x) {
  bind(x, Tensor({x.dim(1), x.dim(2)}));
  graph_.forward(feed_);
  return graph_.value(logits_node_);
}

namespace {

// Early depth gradients are huge (squared-meter losses start around 3e3);
// an unclipped step can kill every relu and freeze training, so steps are
// bounded by a global-norm clip.
constexpr double kGradClipNorm = 10.0;

// Forward + backward + SGD over one shuffled pass per epoch. The depth and
// seg flavors differ only in how a sample becomes loss-graph inputs, so the
// loop is shared.
struct TrainLoop {
  Graph& g;
  NodeId loss_node;
  std::vector<std::pair<NodeId, Tensor*>> updatable;  // graph input -> live param

  double run(std::size_t epochs, double lr, std::uint64_t seed, std::size_t n,
             const std::function<void(std::size_t)>& bind_sample) {
    double last_epoch_mean = 0.0;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t e = 0; e < epochs; ++e) {
      Rng rng(seed_stream(seed, "epoch", e));
      rng.shuffle(order);
      double sum = 0.0;
      for (std::size_t idx : order) {
        bind_sample(idx);
        g.forward(*feed);
        const double l = g.value(loss_node)[0];
        if (!std::isfinite(l)) {
          throw NumericError("training diverged at epoch " + std::to_string(e));
        }
        g.backward(loss_node);
        double sq = 0.0;
        for (auto& [node, param] : updatable) {
          const Tensor& grad = g.grad(node);
          for (std::size_t i = 0; i < param->numel(); ++i) sq += grad[i] * grad[i];
        }
        const double norm = std::sqrt(sq);
        const double step = norm > kGradClipNorm ? lr * kGradClipNorm / norm : lr;
        for (auto& [node, param] : updatable) {
          const Tensor& grad = g.grad(node);
          for (std::size_t i = 0; i < param->numel(); ++i) {
            (*param)[i] -= step * grad[i];
          }
        }
        sum += l;
      }
      last_epoch_mean = sum / static_cast<double>(n);
    }
    return last_epoch_mean;
  }

  Feed* feed = nullptr;
};

}  // namespace

TrainReport train_depth(DepthNet& net, const std::vector<Sample>& train_set,
                        const std::vector<Sample>& holdout, std::size_t epochs, double lr,
                        std::uint64_t seed) {
  if (train_set.empty()) throw DataError("train_depth: empty dataset");
  Graph g;
  const TrunkNodes t = wire_trunk(g);
  const NodeId pred = g.softplus(t.head);
  const NodeId y = g.input("y");
  const NodeId m = g.input("m");
  const NodeId loss = g.masked_sum_squares(g.add(pred, g.scale(y, -1.0)), m);

  Feed feed;
  bind_params(feed, net.params());
  std::vector<Tensor> ys, ms;
  ys.reserve(train_set.size());
  ms.reserve(train_set.size());
  for (const Sample& s : train_set) {
    ys.push_back(as_chw(s.depth));
    Tensor mm = as_chw(s.valid);
    double count = 0.0;
    for (std::size_t i = 0; i < mm.numel(); ++i) count += mm[i] != 0.0;
    if (count == 0.0) throw DataError("train_depth: sample with no valid pixels");
    for (std::size_t i = 0; i < mm.numel(); ++i) mm[i] = mm[i] != 0.0 ? 1.0 / count : 0.0;
    ms.push_back(std::move(mm));
  }

  TrainLoop loop{g, loss, {}};
  loop.feed = &feed;
  for (NamedTensor& p : net.params()) {
    loop.updatable.emplace_back(g.node_of_input(p.name), &p.value);
  }
  const double final_loss =
      loop.run(epochs, lr, seed, train_set.size(), [&](std::size_t idx) {
        feed.set("x", train_set[idx].rgb);
        feed.set("y", ys[idx]);
        feed.set("m", ms[idx]);
      });

  TrainReport report;
  report.epochs = epochs;
  report.final_loss = final_loss;
  if (!holdout.empty()) {
    DepthLossSession session(net);
    double sum = 0.0;
    for (const Sample& s : holdout) {
      sum += rmse(session.predict(s.rgb), SparseDepth{s.depth, s.valid});
    }
    report.holdout_metric = sum / static_cast<double>(holdout.size());
  }
  return report;
}

TrainReport train_seg(SegNet& net, const std::vector<Sample>& train_set,
                      const std::vector<Sample>& holdout, std::size_t epochs, double lr,
                      std::uint64_t seed) {
  if (train_set.empty()) throw DataError("train_seg: empty dataset");
  Graph g;
  const TrunkNodes t = wire_trunk(g);
  const NodeId labels = g.input("labels");
  const NodeId loss = g.reduce_mean(g.softmax_xent_per_pixel(t.head, labels));

  Feed feed;
  bind_params(feed, net.params());

  TrainLoop loop{g, loss, {}};
  loop.feed = &feed;
  for (NamedTensor& p : net.params()) {
    loop.updatable.emplace_back(g.node_of_input(p.name), &p.value);
  }
  const double final_loss =
      loop.run(epochs, lr, seed, train_set.size(), [&](std::size_t idx) {
        feed.set("x", train_set[idx].rgb);
        feed.set("labels", train_set[idx].seg);
      });

  TrainReport report;
  report.epochs = epochs;
  report.final_loss = final_loss;
  if (!holdout.empty()) {
    SegLossSession session(net);
    double sum = 0.0;
    for (const Sample& s : holdout) {
      sum += pixel_accuracy(softmax_channels(session.logits(s.rgb)), s.seg);
    }
    report.holdout_metric = sum / static_cast<double>(holdout.size());
  }
  return report;
}

namespace {

std::string encode_net(const char* arch, const std::vector<NamedTensor>& params) {
  std::string out = "DAVNET ";
  out += arch;
  out += ' ';
  out += std::to_string(count_scalars(params));
  out += '\n';
  for (const NamedTensor& p : params) append_tensor_block(out, p);
  return out;
}

// Shared loader: parses the header, then fills the expected parameter list
// by name, insisting on exact shape matches and no extras.
template <class Net>
Net load_net(const std::filesystem::path& path, Net (*make)(Arch)) {
  const std::string buf = read_binary_file(path);
  BlockReader r(buf, path);
  const std::string header = r.line();
  std::string magic, arch_str, count_str;
  {
    std::size_t a = header.find(' ');
    std::size_t b = a == std::string::npos ? std::string::npos : header.find(' ', a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw DataError(path.string() + ": malformed header '" + header + "'");
    }
    magic = header.substr(0, a);
    arch_str = header.substr(a + 1, b - a - 1);
    count_str = header.substr(b + 1);
  }
  if (magic != "DAVNET") throw DataError(path.string() + ": not a DAVNET checkpoint");
  const Arch arch = parse_arch(arch_str);
  Net net = make(arch);
  if (std::to_string(net.param_count()) != count_str) {
    throw DataError(path.string() + ": parameter count " + count_str + " does not match " +
                    arch_str + " (" + std::to_string(net.param_count()) + " expected)");
  }
  std::vector<bool> seen(net.params().size(), false);
  while (!r.done()) {
    NamedTensor t = r.tensor_block();
    bool matched = false;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      NamedTensor& p = net.params()[i];
      if (p.name != t.name) continue;
      if (seen[i]) throw DataError(path.string() + ": duplicate tensor '" + t.name + "'");
      if (p.value.shape() != t.value.shape()) {
        throw DataError(path.string() + ": tensor '" + t.name + "' has shape " +
                        shape_str(t.value.shape()) + ", expected " + shape_str(p.value.shape()));
      }
      p.value = std::move(t.value);
      seen[i] = true;
      matched = true;
      break;
    }
    if (!matched) throw DataError(path.string() + ": unexpected tensor '" + t.name + "'");
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw DataError(path.string() + ": missing tensor '" + net.params()[i].name + "'");
    }
  }
  return net;
}

DepthNet make_depth(Arch arch) { return DepthNet(arch, 0); }
SegNet make_seg(Arch arch) { return SegNet(arch, 0); }

}  // namespace

void save_depth(const std::filesystem::path& path, const DepthNet& net) {
  write_binary_file(path, encode_net(arch_id(net.arch()), net.params()));
}

void save_seg(const std::filesystem::path& path, const SegNet& net) {
  write_binary_file(path, encode_net(arch_id(net.arch()), net.params()));
}

DepthNet load_depth(const std::filesystem::path& path) {
  return load_net<DepthNet>(path, make_depth);
}

SegNet load_seg(const std::filesystem::path& path) { return load_net<SegNet>(path, make_seg); }

}  // namespace dav
