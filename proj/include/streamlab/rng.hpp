#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace streamlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Named substream of a run seed. Distributions are implemented here rather than
/// with <random> distributions so sequences are identical across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view name);

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Uniform double in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return p > 0.0 && uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace streamlab
