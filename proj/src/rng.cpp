#include "streamlab/rng.hpp"

#include "streamlab/model.hpp"

namespace streamlab {

RngStream::RngStream(std::uint64_t seed, std::string_view name)
    : engine_(splitmix64(seed ^ fnv1a(name))) {}

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = range == 0 ? 0 : (~std::uint64_t{0} - range + 1) % range;
  std::uint64_t x;
  do {
    x = next();
  } while (x < limit);
  return lo + static_cast<std::int64_t>(x % range);
}

}  // namespace streamlab
