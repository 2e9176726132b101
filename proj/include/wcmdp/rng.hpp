#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace wcmdp {

/// Seeded random stream with platform-independent conversions.
///
/// Only the raw 64-bit engine output is taken from the standard library; every
/// derived distribution is computed here so identical seeds give identical
/// draws on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Draws an index from a probability row. Mass that does not reach the draw
  /// because of rounding is assigned to the last positive entry.
  std::size_t categorical(std::span<const double> probs);

  double normal();
  double gamma(double shape);
  std::vector<double> dirichlet(std::span<const double> alpha);

 private:
  std::mt19937_64 engine_;
};

/// One SplitMix64 output: add the golden-ratio increment, then finalize.
std::uint64_t mix64(std::uint64_t x);

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace wcmdp
