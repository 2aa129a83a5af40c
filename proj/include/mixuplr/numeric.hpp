#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "mixuplr/error.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

/// Floor applied to probabilities before taking logs in KL.
inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {
inline void check_logits(std::span<const double> z) {
  if (z.empty()) throw DomainError("softmax: empty input");
  for (double v : z) {
    if (!std::isfinite(v)) throw NonFiniteError("softmax: non-finite logit");
  }
}
}  // namespace detail

/// In-place stable softmax of one logit vector.
inline void softmax_into(std::span<const double> z, std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

inline void log_softmax_into(std::span<const double> z, std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
}

/// softmax of a vector, or row-wise softmax of a batch.
inline Tensor softmax(const Tensor& logits) {
  detail::check_logits(logits.values());
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) softmax_into(logits.row(r), out.row(r));
  return out;
}

inline Tensor log_softmax(const Tensor& logits) {
  detail::check_logits(logits.values());
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) log_softmax_into(logits.row(r), out.row(r));
  return out;
}

inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: shape mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw DomainError("kl_divergence: inputs must be probability vectors");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 log 0 := 0
    kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbabilityFloor)));
  }
  return kl;
}

/// KL(p || q) for two probability vectors with q floored at 1e-12.
inline double kl_divergence(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_divergence");
  return kl_divergence(p.values(), q.values());
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("l2_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double l2_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l2_distance");
  return l2_distance(a.values(), b.values());
}

inline double l2_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Shannon entropy in nats.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace mixuplr
