#include "dav/scene.hpp"

#include <algorithm>
#include <cmath>

#include "dav/error.hpp"
#include "dav/rng.hpp"

namespace dav {

namespace {

// Depth layout of the backdrop: top row ~95 m falling to ~2 m at the bottom.
constexpr double kBackdropFar = 95.0;
constexpr double kBackdropNear = 2.0;

// The depth cue. Brightness over the full [1,100] m range spans only 50
// units, so an eps=16 perturbation can push the implied depth a long way in
// either direction; that headroom is what makes targeted attacks work here.
double brightness(double depth_m) { return 170.0 - 50.0 * (depth_m - 1.0) / 99.0; }

// Per-class reflectance per channel; ratios identify the class, magnitude
// carries the depth cue.
constexpr double kCoeff[kNumClasses][3] = {
    {0.55, 0.65, 0.80},  // background
    {0.70, 0.70, 0.70},  // road
    {0.90, 0.45, 0.30},  // car
    {0.30, 0.85, 0.40},  // person
};

struct Obj {
  int cls;
  std::size_t x0, y0, w, h;
  double depth;
};

std::size_t span(Rng& rng, double lo_frac, double hi_frac, std::size_t dim, std::size_t min_px) {
  std::size_t lo = std::max(min_px, static_cast<std::size_t>(std::llround(lo_frac * dim)));
  std::size_t hi = std::max(lo, static_cast<std::size_t>(std::llround(hi_frac * dim)));
  hi = std::min(hi, dim);
  lo = std::min(lo, hi);
  return lo + rng.below(hi - lo + 1);
}

}  // namespace

void SceneConfig::validate() const {
  if (height < 8 || width < 8) {
    throw DataError("scene size must be at least 8x8, got " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  if (min_objects < 1 || max_objects < min_objects) {
    throw DataError("bad object count range [" + std::to_string(min_objects) + "," +
                    std::to_string(max_objects) + "]");
  }
  if (!(object_depth_min >= 1.0) || !(object_depth_max <= 100.0) ||
      object_depth_min > object_depth_max) {
    throw DataError("object depth range must sit inside [1,100] m");
  }
  if (!(sparsity > 0.0) || sparsity > 1.0) {
    throw DataError("sparsity must be in (0,1], got " + std::to_string(sparsity));
  }
}

Sample generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  Rng rng(cfg.seed);

  const std::size_t horizon =
      static_cast<std::size_t>(std::llround(H * (0.50 + 0.10 * rng.uniform())));

  Sample s;
  s.depth = Tensor({H, W});
  s.seg = Tensor({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    const double d =
        kBackdropFar - (kBackdropFar - kBackdropNear) * static_cast<double>(y) / (H - 1);
    for (std::size_t x = 0; x < W; ++x) {
      s.depth.at(y, x) = d;
      s.seg.at(y, x) = (y < horizon) ? kClassBackground : kClassRoad;
    }
  }

  const std::size_t count = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
  std::vector<Obj> objs(count);
  for (Obj& o : objs) {
    o.cls = rng.below(2) == 0 ? kClassCar : kClassPerson;
    if (o.cls == kClassCar) {
      o.w = span(rng, 0.14, 0.30, W, 4);
      o.h = span(rng, 0.10, 0.20, H, 3);
    } else {
      o.w = span(rng, 0.06, 0.12, W, 3);
      o.h = span(rng, 0.16, 0.28, H, 4);
    }
    const std::size_t y_lo = std::min(static_cast<std::size_t>(std::llround(0.2 * H)), H - o.h);
    o.y0 = y_lo + rng.below(H - o.h - y_lo + 1);
    o.x0 = rng.below(W - o.w + 1);
    o.depth = rng.uniform(cfg.object_depth_min, cfg.object_depth_max);
  }

  // Painter's algorithm: draw far to near so nearer objects occlude. owner
  // records which object ends up visible at each pixel.
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return objs[a].depth > objs[b].depth; });
  std::vector<int> owner(H * W, -1);
  for (std::size_t k : order) {
    const Obj& o = objs[k];
    const double cy = o.y0 + (o.h - 1) / 2.0;
    const double cx = o.x0 + (o.w - 1) / 2.0;
    const double ay = o.h / 2.0, ax = o.w / 2.0;
    for (std::size_t y = o.y0; y < o.y0 + o.h; ++y) {
      for (std::size_t x = o.x0; x < o.x0 + o.w; ++x) {
        if (o.cls == kClassPerson) {
          const double dy = (y - cy) / ay, dx = (x - cx) / ax;
          if (dy * dy + dx * dx > 1.0) continue;
        }
        s.depth.at(y, x) = o.depth;
        s.seg.at(y, x) = o.cls;
        owner[y * W + x] = static_cast<int>(k);
      }
    }
  }

  for (std::size_t k = 0; k < count; ++k) {
    Tensor mask({H, W});
    std::size_t pixels = 0;
    for (std::size_t i = 0; i < H * W; ++i) {
      if (owner[i] == static_cast<int>(k)) {
        mask[i] = 1.0;
        ++pixels;
      }
    }
    if (pixels > 0) s.instances.push_back({std::move(mask), objs[k].cls});
  }

  // Depth is persisted as float32 (PFM); round now so what tests see in
  // memory equals what comes back from disk, then re-pin the object range.
  for (std::size_t i = 0; i < H * W; ++i) {
    double d = static_cast<double>(static_cast<float>(s.depth[i]));
    if (owner[i] >= 0) d = std::clamp(d, cfg.object_depth_min, cfg.object_depth_max);
    s.depth[i] = d;
  }

  s.rgb = Tensor({3, H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const int cls = static_cast<int>(s.seg.at(y, x));
      const double b = brightness(s.depth.at(y, x));
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = static_cast<double>(rng.below(5)) - 2.0;
        double v = std::floor(kCoeff[cls][c] * b + noise + 0.5);
        s.rgb.at(c, y, x) = std::clamp(v, 0.0, 255.0);
      }
    }
  }

  s.valid = sparsify(s.depth, cfg.sparsity, seed_stream(cfg.seed, "valid")).valid;
  return s;
}

SparseDepth sparsify(const Tensor& depth, double rate, std::uint64_t seed) {
  if (!(rate > 0.0) || rate > 1.0) {
    throw DataError("sparsify: rate must be in (0,1], got " + std::to_string(rate));
  }
  Rng rng(seed);
  SparseDepth out;
  out.values = depth;
  out.valid = Tensor(depth.shape());
  for (std::size_t i = 0; i < depth.numel(); ++i) {
    out.valid[i] = rng.uniform() < rate ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace dav
