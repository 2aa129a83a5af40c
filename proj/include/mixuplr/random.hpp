#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "mixuplr/error.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Seeded random stream. The engine is std::mt19937_64 (its output sequence is
/// fixed by the standard); all distribution mappings below are implemented
/// here rather than with <random> distributions, whose outputs vary across
/// standard library vendors.
///
/// A stream is identified by (seed, stream id). split() derives an independent
/// child stream, which is how concurrent or purpose-specific consumers get
/// their own randomness without disturbing the parent sequence.
class RngState {
 public:
  explicit RngState(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), engine_(detail::splitmix64(seed ^ detail::splitmix64(stream + 0x5851F42D4C957F2DULL))) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t draws() const noexcept { return draws_; }

  RngState split(std::uint64_t child_id) const {
    return RngState(seed_, detail::splitmix64(stream_ * 0x9E3779B97F4A7C15ULL + child_id + 1));
  }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw DomainError("RngState::below: n must be positive");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return static_cast<std::size_t>(v % bound);
  }

  /// Standard normal by Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(phi);
    return r * std::cos(phi);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
  std::optional<double> spare_;
};

/// log of a Gamma(shape, 1) variate. Marsaglia-Tsang rejection for shape >= 1;
/// for shape < 1 the boost G(a) = G(a + 1) * U^(1/a) is applied in log space so
/// tiny shapes do not underflow.
inline double sample_log_gamma(double shape, RngState& rng) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw DomainError("gamma shape must be positive and finite");
  if (shape < 1.0) {
    const double boosted = sample_log_gamma(shape + 1.0, rng);
    return boosted + std::log(rng.uniform_open()) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d) + std::log(v);
  }
}

inline double sample_gamma(double shape, RngState& rng) { return std::exp(sample_log_gamma(shape, rng)); }

/// Symmetric Beta(alpha, alpha) draw as G1 / (G1 + G2).
inline double sample_beta(double alpha, RngState& rng) {
  if (!(alpha > 0.0)) throw DomainError("sample_beta: alpha must be > 0");
  const double lg1 = sample_log_gamma(alpha, rng);
  const double lg2 = sample_log_gamma(alpha, rng);
  // G1 / (G1 + G2) = 1 / (1 + exp(lg2 - lg1))
  return 1.0 / (1.0 + std::exp(lg2 - lg1));
}

/// i.i.d. N(0, sigma^2) entries.
inline Tensor sample_gaussian_vector(std::size_t dim, double sigma, RngState& rng) {
  if (dim == 0) throw DomainError("sample_gaussian_vector: dim must be >= 1");
  if (!(sigma >= 0.0)) throw DomainError("sample_gaussian_vector: sigma must be >= 0");
  Tensor out({dim});
  for (std::size_t i = 0; i < dim; ++i) out[i] = sigma * rng.normal();
  return out;
}

/// Uniformly random permutation of 0..n-1 (Fisher-Yates).
inline std::vector<std::size_t> random_permutation(std::size_t n, RngState& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace mixuplr
