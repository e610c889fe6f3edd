#include "dav/universal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>

#include "dav/attacks.hpp"
#include "dav/checkpoint.hpp"
#include "dav/error.hpp"
#include "dav/metrics.hpp"
#include "dav/rng.hpp"

namespace dav {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }

std::string train_digest(const UniversalTrainConfig& cfg, const MultiTaskWeights& w) {
  std::string d;
  d += "wd=" + format_double(w.depth);
  d += ",ws=" + format_double(w.semantic);
  d += ",gamma=" + format_double(cfg.gamma);
  d += ",alpha=" + format_double(cfg.alpha);
  d += ",mu=" + format_double(cfg.mu);
  d += ",epochs=" + std::to_string(cfg.epochs);
  d += ",T=" + std::to_string(cfg.inner_iterations);
  d += ",batch=" + std::to_string(cfg.batch_size);
  d += ",seed=" + std::to_string(cfg.seed);
  d += ",init=";
  d += cfg.init == DeltaInit::kZero ? "zero" : "random";
  d += ",binit=";
  d += cfg.batch_init == BatchInit::kPlain ? "plain" : "delta";
  return d;
}

void check_ball(const Tensor& delta, double epsilon, const std::string& where) {
  if (!delta.all_finite() || max_abs(delta) > epsilon + 1e-9) {
    throw DataError(where + ": perturbation leaves its epsilon=" + format_double(epsilon) +
                    " ball");
  }
}

}  // namespace

void MultiTaskWeights::validate() const {
  if (!std::isfinite(depth) || !std::isfinite(semantic) || depth < 0.0 || semantic < 0.0) {
    throw UsageError("task weights must be finite and >= 0");
  }
  if (depth + semantic <= 0.0) throw UsageError("at least one task weight must be positive");
}

double multitask_loss(double l_depth, double l_semantic, const MultiTaskWeights& w) {
  w.validate();
  return w.depth * std::abs(l_depth) + w.semantic * std::abs(l_semantic);
}

Tensor multitask_gradient(const Tensor& g_depth, const Tensor& g_semantic,
                          const MultiTaskWeights& w) {
  w.validate();
  const Tensor* shape_src = w.depth > 0.0 ? &g_depth : &g_semantic;
  if (shape_src->empty()) throw DataError("multitask_gradient: active task gradient is empty");
  if (w.depth > 0.0 && w.semantic > 0.0 && !g_depth.same_shape(g_semantic)) {
    throw DataError("multitask_gradient: " + shape_str(g_depth.shape()) + " vs " +
                    shape_str(g_semantic.shape()));
  }
  Tensor out(shape_src->shape());
  if (w.depth > 0.0) {
    const double n = std::max(l1_norm(g_depth), 1e-12);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += w.depth * (g_depth[i] / n);
  }
  if (w.semantic > 0.0) {
    const double n = std::max(l1_norm(g_semantic), 1e-12);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += w.semantic * (g_semantic[i] / n);
  }
  return out;
}

void UniversalTrainConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw UsageError("universal: epsilon must be finite and >= 0");
  }
  if (!std::isfinite(gamma) || gamma < 0.0) {
    throw UsageError("universal: gamma must be finite and >= 0");
  }
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    throw UsageError("universal: alpha must be finite and positive");
  }
  if (!std::isfinite(mu) || mu < 0.0) {
    throw UsageError("universal: mu must be finite and >= 0");
  }
  if (epochs < 1) throw UsageError("universal: epochs must be >= 1");
  if (inner_iterations < 1) throw UsageError("universal: inner iterations must be >= 1");
  if (batch_size < 1) throw UsageError("universal: batch size must be >= 1");
}

UniversalPerturbation train_universal(const DepthNet& depth, const SegNet* seg,
                                      const std::vector<Sample>& data,
                                      const UniversalTrainConfig& cfg, const MultiTaskWeights& w,
                                      UniversalTrainStats* stats) {
  cfg.validate();
  w.validate();
  if (data.empty()) throw DataError("universal: empty dataset");
  const bool use_seg = w.semantic > 0.0;
  if (use_seg && seg == nullptr) {
    throw UsageError("universal: a positive semantic weight needs a segmentation net");
  }
  const Shape shape = data[0].rgb.shape();
  for (const Sample& s : data) {
    if (s.rgb.shape() != shape) {
      throw DataError("universal: images must share one shape, found " +
                      shape_str(s.rgb.shape()) + " and " + shape_str(shape));
    }
  }

  UniversalTrainStats scratch;
  UniversalTrainStats& st = stats != nullptr ? *stats : scratch;
  st = UniversalTrainStats{};

  DepthLossSession dsess(depth);
  std::optional<SegLossSession> ssess;
  if (use_seg) ssess.emplace(*seg);

  // The least-likely labels come from the clean images and stay fixed, so
  // the semantic objective does not chase its own perturbation.
  std::vector<Tensor> llm(data.size());
  if (use_seg) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      llm[i] = least_likely_label(softmax_channels(ssess->logits(data[i].rgb)));
      ++st.seg_evals;
    }
  }

  Tensor delta(shape);
  if (cfg.init == DeltaInit::kRandom) {
    Rng rng(seed_stream(cfg.seed, "uap/init"));
    for (std::size_t i = 0; i < delta.numel(); ++i) {
      delta[i] = rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    Rng erng(seed_stream(cfg.seed, "uap/epoch", e));
    erng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t nb = end - begin;
      const double inv = 1.0 / static_cast<double>(nb);
      const std::size_t batch_index = st.minibatches;

      std::vector<Tensor> x0(nb);
      std::vector<Tensor> xt(nb);
      for (std::size_t i = 0; i < nb; ++i) {
        const Tensor& clean = data[order[begin + i]].rgb;
        if (cfg.batch_init == BatchInit::kApplyDelta) {
          Tensor z = clean;
          for (std::size_t j = 0; j < z.numel(); ++j) z[j] += delta[j];
          x0[i] = clip_to_ball(z, clean, cfg.epsilon);
        } else {
          x0[i] = clean;
        }
        xt[i] = x0[i];
      }

      Tensor momentum(shape);
      double last_loss = 0.0;
      for (int t = 0; t < cfg.inner_iterations; ++t) {
        Tensor gd(shape);
        Tensor gs;
        if (use_seg) gs = Tensor(shape);
        double ld = 0.0;
        double ls = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
          const Sample& s = data[order[begin + i]];
          Tensor g;
          const double mse = dsess.loss_and_grad(xt[i], s.depth, s.valid, g);
          ++st.depth_evals;
          // the graph computes mean squared error; take the square root (and
          // its chain rule) outside so the task loss is an RMSE
          const double r = std::sqrt(mse);
          const double scale = r > 0.0 ? 0.5 / r : 0.0;
          for (std::size_t j = 0; j < gd.numel(); ++j) gd[j] += g[j] * scale;
          ld += r;
          if (use_seg) {
            Tensor gg;
            ls += ssess->loss_and_grad(xt[i], llm[order[begin + i]], gg);
            ++st.seg_evals;
            for (std::size_t j = 0; j < gs.numel(); ++j) gs[j] += gg[j];
          }
        }
        for (std::size_t j = 0; j < gd.numel(); ++j) gd[j] *= inv;
        ld *= inv;
        if (use_seg) {
          // the semantic task descends toward the least likely labels, so
          // its gradient flips before joining the shared ascent direction
          for (std::size_t j = 0; j < gs.numel(); ++j) gs[j] = -(gs[j] * inv);
          ls *= inv;
        }

        last_loss = multitask_loss(ld, ls, w);
        if (!std::isfinite(last_loss) || !gd.all_finite() || (use_seg && !gs.all_finite())) {
          throw NumericError("universal: non-finite loss at minibatch " +
                             std::to_string(batch_index));
        }

        const Tensor combined = multitask_gradient(gd, gs, w);
        for (std::size_t j = 0; j < momentum.numel(); ++j) {
          momentum[j] = cfg.mu * momentum[j] + combined[j];
        }
        for (std::size_t i = 0; i < nb; ++i) {
          const Tensor& clean = data[order[begin + i]].rgb;
          Tensor z = xt[i];
          for (std::size_t j = 0; j < z.numel(); ++j) {
            z[j] += cfg.alpha * sign_of(momentum[j]);
          }
          xt[i] = clip_to_ball(z, clean, cfg.epsilon);
        }
      }

      Tensor batch_delta(shape);
      for (std::size_t i = 0; i < nb; ++i) {
        for (std::size_t j = 0; j < batch_delta.numel(); ++j) {
          batch_delta[j] += xt[i][j] - x0[i][j];
        }
      }
      for (std::size_t j = 0; j < delta.numel(); ++j) {
        const double moved = delta[j] + cfg.gamma * (batch_delta[j] * inv);
        delta[j] = std::min(std::max(moved, -cfg.epsilon), cfg.epsilon);
      }

      st.batch_loss.push_back(last_loss);
      ++st.minibatches;
    }
  }

  UniversalPerturbation up;
  up.delta = std::move(delta);
  up.epsilon = cfg.epsilon;
  up.digest = train_digest(cfg, w);
  return up;
}

Tensor apply_universal(const Tensor& x, const UniversalPerturbation& up) {
  if (!x.same_shape(up.delta)) {
    throw DataError("apply_universal: image " + shape_str(x.shape()) + " vs delta " +
                    shape_str(up.delta.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = std::min(std::max(x[i] + up.delta[i], 0.0), 255.0);
  }
  return out;
}

void save_universal(const std::filesystem::path& path, const UniversalPerturbation& up) {
  if (up.delta.rank() != 3 || up.delta.dim(0) != 3) {
    throw DataError("save_universal: delta must be {3,h,w}, got " + shape_str(up.delta.shape()));
  }
  check_ball(up.delta, up.epsilon, "save_universal");
  std::string blob = "DAVUAP " + format_double(up.epsilon) + " " +
                     (up.digest.empty() ? "-" : up.digest) + "\n";
  append_tensor_block(blob, NamedTensor{"delta", up.delta});
  write_binary_file(path, blob);
}

UniversalPerturbation load_universal(const std::filesystem::path& path) {
  const std::string buf = read_binary_file(path);
  BlockReader r(buf, path);
  const std::string header = r.line();
  const std::size_t a = header.find(' ');
  const std::size_t b = a == std::string::npos ? std::string::npos : header.find(' ', a + 1);
  if (a == std::string::npos || b == std::string::npos) {
    throw DataError(path.string() + ": malformed header '" + header + "'");
  }
  if (header.substr(0, a) != "DAVUAP") {
    throw DataError(path.string() + ": not a DAVUAP perturbation file");
  }
  UniversalPerturbation up;
  const std::string eps_str = header.substr(a + 1, b - a - 1);
  try {
    std::size_t used = 0;
    up.epsilon = std::stod(eps_str, &used);
    if (used != eps_str.size()) throw std::invalid_argument(eps_str);
  } catch (const std::exception&) {
    throw DataError(path.string() + ": bad epsilon '" + eps_str + "'");
  }
  up.digest = header.substr(b + 1);
  if (up.digest == "-") up.digest.clear();

  NamedTensor block = r.tensor_block();
  r.expect_done();
  if (block.name != "delta") {
    throw DataError(path.string() + ": expected a 'delta' block, found '" + block.name + "'");
  }
  if (block.value.rank() != 3 || block.value.dim(0) != 3) {
    throw DataError(path.string() + ": delta must be {3,h,w}, got " +
                    shape_str(block.value.shape()));
  }
  up.delta = std::move(block.value);
  check_ball(up.delta, up.epsilon, path.string());
  return up;
}

}  // namespace dav
