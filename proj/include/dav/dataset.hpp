#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dav/scene.hpp"

namespace dav {

// On-disk layout, all under one root:
//   <root>/<split>/<id>.rgb.ppm     color image (P6)
//   <root>/<split>/<id>.depth.pfm   dense depth, meters
//   <root>/<split>/<id>.valid.pgm   annotation mask (0/1)
//   <root>/<split>/<id>.seg.pgm     class labels
//   <root>/<split>/<id>.inst<k>.pgm instance k's mask; set pixels hold the
//                                   class id so one file carries both
//   <root>/index.csv                id,split,instances

struct IndexEntry {
  std::string id;
  std::string split;
  std::size_t instances = 0;
};

struct GenConfig {
  std::size_t count = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  double sparsity = 0.3;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Which of the n samples land in the validation split; ascending indices.
// Depends only on (n, val_fraction, seed).
std::vector<std::size_t> val_indices(std::size_t n, double val_fraction, std::uint64_t seed);

void write_sample(const std::filesystem::path& dir, const std::string& id, const Sample& s);
Sample read_sample(const std::filesystem::path& dir, const std::string& id,
                   std::size_t instance_count);

// Generates cfg.count scenes, splits train/val, writes samples + index.csv.
std::vector<IndexEntry> generate_dataset(const std::filesystem::path& root, const GenConfig& cfg);

void write_index(const std::filesystem::path& root, const std::vector<IndexEntry>& entries);
std::vector<IndexEntry> read_index(const std::filesystem::path& root);

// All samples of one split, in index order. ids, when non-null, receives the
// matching sample ids.
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split,
                               std::vector<std::string>* ids = nullptr);

}  // namespace dav
