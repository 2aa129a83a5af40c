#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mixuplr/numeric.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

// Loss heads map a batch of logits [B x S] to a scalar and its gradient with
// respect to the logits. Masked heads average over the selected rows only and
// contribute zero when no row is selected.

/// -sum_j y_j log softmax(z)_j, averaged over (masked) rows.
struct SoftTargetCrossEntropy {
  Tensor targets;
  std::vector<char> row_mask;  // empty = all rows
};

/// ||softmax(z) - y||^2, averaged over (masked) rows.
struct MeanSquaredProbability {
  Tensor targets;
  std::vector<char> row_mask;
};

/// KL(reference || softmax(z)) averaged over rows; the reference is constant.
struct KlToReference {
  Tensor reference;
};

/// sum over rows and outputs of weights_j * z_j. Empty weights = all ones.
struct ScalarOutputSum {
  std::vector<double> weights;
};

using LossHead = std::variant<SoftTargetCrossEntropy, MeanSquaredProbability, KlToReference, ScalarOutputSum>;

enum class LossHeadKind { soft_cross_entropy, mean_squared_probability, kl_to_reference, scalar_output_sum };

inline LossHeadKind parse_loss_head_kind(std::string_view name) {
  if (name == "cross-entropy") return LossHeadKind::soft_cross_entropy;
  if (name == "mean-squared-probability") return LossHeadKind::mean_squared_probability;
  if (name == "kl-to-reference") return LossHeadKind::kl_to_reference;
  if (name == "scalar-output-sum") return LossHeadKind::scalar_output_sum;
  throw DomainError("unknown loss head: " + std::string(name));
}

struct HeadResult {
  double value = 0.0;
  Tensor d_logits;
};

namespace detail {

inline std::size_t masked_count(const std::vector<char>& mask, std::size_t rows) {
  if (mask.empty()) return rows;
  if (mask.size() != rows) throw ShapeError("loss head: row mask length mismatch");
  std::size_t n = 0;
  for (char m : mask) n += m ? 1 : 0;
  return n;
}

inline bool row_selected(const std::vector<char>& mask, std::size_t r) { return mask.empty() || mask[r]; }

inline HeadResult apply(const SoftTargetCrossEntropy& h, const Tensor& logits) {
  require_same_shape(h.targets, logits, "cross-entropy head");
  HeadResult res{0.0, Tensor(logits.shape())};
  const std::size_t n = masked_count(h.row_mask, logits.rows());
  if (n == 0) return res;
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> logp(logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!row_selected(h.row_mask, r)) continue;
    log_softmax_into(logits.row(r), logp);
    const auto y = h.targets.row(r);
    double ysum = 0.0;
    for (std::size_t j = 0; j < logp.size(); ++j) {
      res.value -= scale * y[j] * logp[j];
      ysum += y[j];
    }
    auto g = res.d_logits.row(r);
    for (std::size_t j = 0; j < logp.size(); ++j) g[j] = scale * (ysum * std::exp(logp[j]) - y[j]);
  }
  return res;
}

inline HeadResult apply(const MeanSquaredProbability& h, const Tensor& logits) {
  require_same_shape(h.targets, logits, "mean-squared-probability head");
  HeadResult res{0.0, Tensor(logits.shape())};
  const std::size_t n = masked_count(h.row_mask, logits.rows());
  if (n == 0) return res;
  const double scale = 1.0 / static_cast<double>(n);
  const std::size_t s = logits.cols();
  std::vector<double> p(s), e(s);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!row_selected(h.row_mask, r)) continue;
    softmax_into(logits.row(r), p);
    const auto y = h.targets.row(r);
    double pe = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      e[j] = p[j] - y[j];
      res.value += scale * e[j] * e[j];
      pe += p[j] * e[j];
    }
    // d/dz of sum_j e_j^2 through the softmax Jacobian diag(p) - p p^T.
    auto g = res.d_logits.row(r);
    for (std::size_t j = 0; j < s; ++j) g[j] = scale * 2.0 * p[j] * (e[j] - pe);
  }
  return res;
}

inline HeadResult apply(const KlToReference& h, const Tensor& logits) {
  require_same_shape(h.reference, logits, "kl-to-reference head");
  HeadResult res{0.0, Tensor(logits.shape())};
  const std::size_t b = logits.rows();
  if (b == 0) return res;
  const double scale = 1.0 / static_cast<double>(b);
  const double log_floor = std::log(kProbabilityFloor);
  const std::size_t s = logits.cols();
  std::vector<double> logq(s);
  for (std::size_t r = 0; r < b; ++r) {
    log_softmax_into(logits.row(r), logq);
    const auto p = h.reference.row(r);
    double unfloored_mass = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      if (p[j] <= 0.0) continue;
      const bool floored = logq[j] < log_floor;
      res.value += scale * p[j] * (std::log(p[j]) - (floored ? log_floor : logq[j]));
      if (!floored) unfloored_mass += p[j];
    }
    auto g = res.d_logits.row(r);
    for (std::size_t j = 0; j < s; ++j) {
      const bool counted = p[j] > 0.0 && logq[j] >= log_floor;
      g[j] = scale * (std::exp(logq[j]) * unfloored_mass - (counted ? p[j] : 0.0));
    }
  }
  return res;
}

inline HeadResult apply(const ScalarOutputSum& h, const Tensor& logits) {
  const std::size_t s = logits.cols();
  if (!h.weights.empty() && h.weights.size() != s) throw ShapeError("scalar-output-sum head: weight length mismatch");
  HeadResult res{0.0, Tensor(logits.shape())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto g = res.d_logits.row(r);
    const auto z = logits.row(r);
    for (std::size_t j = 0; j < s; ++j) {
      const double w = h.weights.empty() ? 1.0 : h.weights[j];
      res.value += w * z[j];
      g[j] = w;
    }
  }
  return res;
}

}  // namespace detail

inline HeadResult evaluate_head(const LossHead& head, const Tensor& logits) {
  return std::visit([&](const auto& h) { return detail::apply(h, logits); }, head);
}

}  // namespace mixuplr
