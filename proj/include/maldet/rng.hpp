#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace maldet::nd {

/// Deterministic random stream built on splitmix64.
///
/// The state advances by the 64-bit golden-ratio increment 0x9E3779B97F4A7C15
/// and every output is the standard splitmix64 finalizer of the new state.
/// Doubles take the top 53 bits of an output. Integer draws below a bound use
/// rejection sampling so results do not depend on the standard library's
/// distribution implementations; the stream is identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  /// Independent stream for a named purpose (initialization, shuffling, dropout...).
  static Rng derive(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1).
  double uniform01() noexcept;

  /// Uniform in (-limit, +limit); zero-width endpoints are rejected.
  double symmetric(double limit) noexcept;

  /// Uniform integer in [0, bound). `bound` must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace maldet::nd
