#include "dav/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dav/error.hpp"
#include "dav/image_io.hpp"
#include "dav/rng.hpp"

namespace dav {

std::vector<std::size_t> val_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction > 1.0) {
    throw DataError("val fraction must be in [0,1], got " + std::to_string(val_fraction));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed_stream(seed, "split"));
  rng.shuffle(order);
  const std::size_t k = static_cast<std::size_t>(std::llround(val_fraction * n));
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

std::string sample_id(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

}  // namespace

void write_sample(const std::filesystem::path& dir, const std::string& id, const Sample& s) {
  std::filesystem::create_directories(dir);
  write_ppm(dir / (id + ".rgb.ppm"), s.rgb);
  write_pfm(dir / (id + ".depth.pfm"), s.depth);
  write_pgm(dir / (id + ".valid.pgm"), s.valid);
  write_pgm(dir / (id + ".seg.pgm"), s.seg);
  for (std::size_t k = 0; k < s.instances.size(); ++k) {
    const Instance& inst = s.instances[k];
    Tensor coded(inst.mask.shape());
    for (std::size_t i = 0; i < inst.mask.numel(); ++i) {
      coded[i] = inst.mask[i] != 0.0 ? static_cast<double>(inst.cls) : 0.0;
    }
    write_pgm(dir / (id + ".inst" + std::to_string(k) + ".pgm"), coded);
  }
}

Sample read_sample(const std::filesystem::path& dir, const std::string& id,
                   std::size_t instance_count) {
  Sample s;
  s.rgb = read_ppm(dir / (id + ".rgb.ppm"));
  s.depth = read_pfm(dir / (id + ".depth.pfm"));
  s.valid = read_pgm(dir / (id + ".valid.pgm"));
  s.seg = read_pgm(dir / (id + ".seg.pgm"));
  for (std::size_t k = 0; k < instance_count; ++k) {
    const Tensor coded = read_pgm(dir / (id + ".inst" + std::to_string(k) + ".pgm"));
    Instance inst;
    inst.mask = Tensor(coded.shape());
    int cls = 0;
    for (std::size_t i = 0; i < coded.numel(); ++i) {
      if (coded[i] != 0.0) {
        inst.mask[i] = 1.0;
        cls = static_cast<int>(coded[i]);
      }
    }
    if (cls == 0) {
      throw DataError((dir / (id + ".inst" + std::to_string(k) + ".pgm")).string() +
                      ": empty instance mask");
    }
    inst.cls = cls;
    s.instances.push_back(std::move(inst));
  }
  return s;
}

std::vector<IndexEntry> generate_dataset(const std::filesystem::path& root, const GenConfig& cfg) {
  const std::vector<std::size_t> val = val_indices(cfg.count, cfg.val_fraction, cfg.seed);
  std::vector<IndexEntry> entries;
  std::size_t vi = 0;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const bool is_val = vi < val.size() && val[vi] == i;
    if (is_val) ++vi;
    SceneConfig sc;
    sc.height = cfg.height;
    sc.width = cfg.width;
    sc.sparsity = cfg.sparsity;
    sc.seed = seed_stream(cfg.seed, "scene", i);
    const Sample s = generate_scene(sc);
    IndexEntry e;
    e.id = sample_id(i);
    e.split = is_val ? "val" : "train";
    e.instances = s.instances.size();
    write_sample(root / e.split, e.id, s);
    entries.push_back(std::move(e));
  }
  write_index(root, entries);
  return entries;
}

void write_index(const std::filesystem::path& root, const std::vector<IndexEntry>& entries) {
  std::filesystem::create_directories(root);
  const std::filesystem::path path = root / "index.csv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "id,split,instances\n";
  for (const IndexEntry& e : entries) {
    out << e.id << ',' << e.split << ',' << e.instances << "\n";
  }
  if (!out.flush()) throw DataError("write failed on " + path.string());
}

std::vector<IndexEntry> read_index(const std::filesystem::path& root) {
  const std::filesystem::path path = root / "index.csv";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,split,instances") {
    throw DataError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<IndexEntry> entries;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    IndexEntry e;
    std::string count;
    if (!std::getline(ss, e.id, ',') || !std::getline(ss, e.split, ',') ||
        !std::getline(ss, count)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      e.instances = std::stoul(count);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad instance count '" +
                      count + "'");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split,
                               std::vector<std::string>* ids) {
  std::vector<Sample> out;
  if (ids) ids->clear();
  for (const IndexEntry& e : read_index(root)) {
    if (e.split != split) continue;
    out.push_back(read_sample(root / e.split, e.id, e.instances));
    if (ids) ids->push_back(e.id);
  }
  return out;
}

}  // namespace dav
