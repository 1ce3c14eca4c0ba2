#include "maldet/rng.hpp"

namespace maldet::nd {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) noexcept {
  return Rng(mix(seed ^ mix(stream + kGolden)));
}

std::uint64_t Rng::next_u64() noexcept {
  state_ += kGolden;
  return mix(state_);
}

double Rng::uniform01() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::symmetric(double limit) noexcept {
  double u = 0.0;
  do {
    u = uniform01();
  } while (u == 0.0);
  return limit * (2.0 * u - 1.0);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

}  // namespace maldet::nd
