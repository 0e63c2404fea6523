#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace baq {

/// splitmix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed of an independent stream: mix(root ^ stream). Per-user streams use
/// the user's index within the run as `stream`.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

/// Project-wide generator. Only the raw 64-bit output of mt19937_64 is used;
/// every variate below is derived from it explicitly so sequences are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection (unbiased).
  std::size_t below(std::size_t n);

  /// Inverse-CDF categorical draw.
  std::size_t categorical(std::span<const double> probs);

  double normal();

  /// Gamma(shape, 1) via Marsaglia–Tsang.
  double gamma(double shape);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Category drawn from a fixed uniform variate; used by common-random-number
/// sampling where the variate is drawn once and reused.
std::size_t categorical_from_uniform(std::span<const double> probs, double u);

}  // namespace baq
