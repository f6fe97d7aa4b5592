#pragma once

#include <cstdint>

namespace spade {

/// xoshiro256** seeded through splitmix64. Every sample is produced with
/// integer arithmetic and explicit float conversions so streams are identical
/// across compilers and platforms (std:: distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() noexcept;
  /// Uniform in [0, 1) with 53 bits.
  double uniform_double() noexcept;
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Standard normal via Box-Muller in double, rounded to f32.
  float normal() noexcept;

  /// Child stream whose seed is derived from this stream's seed and `stream`.
  /// Does not advance this generator.
  Rng fork(std::uint64_t stream) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace spade
