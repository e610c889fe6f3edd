#pragma once

#include <cstdint>
#include <vector>

#include "dav/metrics.hpp"
#include "dav/tensor.hpp"

namespace dav {

inline constexpr int kNumClasses = 4;
enum SceneClass : int {
  kClassBackground = 0,
  kClassRoad = 1,
  kClassCar = 2,
  kClassPerson = 3,
};

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 5;
  double object_depth_min = 5.0;   // meters
  double object_depth_max = 50.0;  // meters
  double sparsity = 0.3;           // fraction of annotated depth pixels
  std::uint64_t seed = 0;

  void validate() const;
};

struct Instance {
  Tensor mask;  // {h,w} 0/1, pixels this object owns after occlusion
  int cls = kClassCar;
};

struct Sample {
  Tensor rgb;    // {3,h,w} integers in [0,255]
  Tensor depth;  // {h,w} meters, float32-representable values
  Tensor valid;  // {h,w} 0/1 annotation mask
  Tensor seg;    // {h,w} labels in [0, kNumClasses)
  std::vector<Instance> instances;
};

// Procedural scene: a ground plane receding to the top of the image (far at
// top), 2-5 boxes ("cars") and ellipses ("people") at random depths. Pixel
// color encodes depth — brightness falls linearly with distance — so depth
// is learnable from RGB alone. Deterministic given cfg.seed.
Sample generate_scene(const SceneConfig& cfg);

// i.i.d. Bernoulli(rate) validity mask over the depth map.
SparseDepth sparsify(const Tensor& depth, double rate, std::uint64_t seed);

}  // namespace dav
