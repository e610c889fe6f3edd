#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace dav {

// splitmix64. Self-contained so streams are identical across standard
// libraries and platforms; std::uniform_real_distribution is not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), n > 0. Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  template <class T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::swap(xs[i - 1], xs[below(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

// Every random draw in the project derives from one root seed through named
// streams: seed_stream(root, "scene", i), seed_stream(root, "init/enc1.w"),
// and so on. The mix is FNV-1a over the name plus an index, folded into the
// root; collisions between distinct names are not a concern at this scale.
inline std::uint64_t seed_stream(std::uint64_t root, std::string_view name,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (unsigned char c : name) mix(c);
  for (int i = 0; i < 8; ++i) mix((index >> (8 * i)) & 0xff);
  for (int i = 0; i < 8; ++i) mix((root >> (8 * i)) & 0xff);
  return h;
}

}  // namespace dav
