#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <vector>

#include "mixuplr/datasets.hpp"
#include "mixuplr/error.hpp"
#include "mixuplr/numeric.hpp"
#include "mixuplr/random.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

/// Anything that maps a batch [B x d] to logits [B x S].
template <class M>
concept BatchModel = requires(const M& m, const Tensor& x) {
  { m.forward(x) } -> std::convertible_to<Tensor>;
};

enum class Origin : unsigned char { labeled_near, unlabeled_near };

struct MixedBatch {
  Tensor x_tilde;
  Tensor y_tilde;
  std::vector<Origin> origin;
  std::vector<std::size_t> partner;  // row index of x2 in the concatenated (labeled, unlabeled) batch
  double lambda_prime = 1.0;

  std::vector<char> mask(Origin which) const {
    std::vector<char> m(origin.size());
    for (std::size_t i = 0; i < origin.size(); ++i) m[i] = origin[i] == which ? 1 : 0;
    return m;
  }
};

struct MixedPair {
  Tensor x;
  Tensor y;
};

/// lambda * (x1, y1) + (1 - lambda) * (x2, y2).
inline MixedPair mix_pair(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("mix_pair: lambda must lie in [0, 1]");
  require_same_shape(x1, x2, "mix_pair features");
  require_same_shape(y1, y2, "mix_pair targets");
  MixedPair out{Tensor(x1.shape()), Tensor(y1.shape())};
  for (std::size_t i = 0; i < x1.size(); ++i) out.x[i] = lambda * x1[i] + (1.0 - lambda) * x2[i];
  for (std::size_t i = 0; i < y1.size(); ++i) out.y[i] = lambda * y1[i] + (1.0 - lambda) * y2[i];
  return out;
}

/// Mixes the concatenation W = (labeled, unlabeled) with a shuffled copy of
/// itself. One lambda ~ Beta(alpha, alpha) is drawn per call and folded to
/// lambda' = max(lambda, 1 - lambda), so each mixed row stays closer to its own
/// first endpoint; `origin` records which half that endpoint came from.
inline MixedBatch mixmatch_mix(const Tensor& labeled_x, const Tensor& labeled_y, const Tensor& unlabeled_x,
                               const Tensor& unlabeled_targets, double alpha, RngState& rng) {
  require_matrix(labeled_x, "mixmatch_mix labeled features");
  require_matrix(unlabeled_x, "mixmatch_mix unlabeled features");
  if (labeled_x.rows() == 0 || unlabeled_x.rows() == 0) throw ShapeError("mixmatch_mix: both batches must be nonempty");
  if (labeled_x.cols() != unlabeled_x.cols()) throw ShapeError("mixmatch_mix: feature dimension mismatch");
  if (labeled_y.cols() != unlabeled_targets.cols()) throw ShapeError("mixmatch_mix: class count mismatch");
  if (labeled_y.rows() != labeled_x.rows() || unlabeled_targets.rows() != unlabeled_x.rows()) {
    throw ShapeError("mixmatch_mix: feature/target row mismatch");
  }

  const Tensor wx = concat_rows(labeled_x, unlabeled_x);
  const Tensor wy = concat_rows(labeled_y, unlabeled_targets);
  const std::size_t n = wx.rows();
  const std::size_t d = wx.cols();
  const std::size_t s = wy.cols();

  const double lambda = sample_beta(alpha, rng);
  const double lp = std::max(lambda, 1.0 - lambda);
  MixedBatch out{Tensor({n, d}), Tensor({n, s}), std::vector<Origin>(n), random_permutation(n, rng), lp};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = out.partner[i];
    for (std::size_t k = 0; k < d; ++k) out.x_tilde(i, k) = lp * wx(i, k) + (1.0 - lp) * wx(j, k);
    for (std::size_t k = 0; k < s; ++k) out.y_tilde(i, k) = lp * wy(i, k) + (1.0 - lp) * wy(j, k);
    out.origin[i] = i < labeled_x.rows() ? Origin::labeled_near : Origin::unlabeled_near;
  }
  return out;
}

/// Average of softmax predictions over P augmented copies of the batch. The
/// result is used as a constant target; nothing differentiates through it.
template <BatchModel Model>
Tensor guess_labels(const Model& model, const Tensor& u_batch, std::size_t copies, const AugmentSpec& aug,
                    RngState& rng) {
  if (copies == 0) throw DomainError("guess_labels: P must be >= 1");
  Tensor q;
  for (std::size_t p = 0; p < copies; ++p) {
    const Tensor probs = softmax(model.forward(augment(u_batch, aug, rng)));
    if (p == 0) {
      q = probs;
    } else {
      for (std::size_t i = 0; i < q.size(); ++i) q[i] += probs[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(copies);
  if (copies > 1) {
    for (double& v : q.values()) v *= inv;
  }
  return q;
}

/// Row-wise temperature sharpening q^(1/tau) / sum q^(1/tau), evaluated in log
/// space so small temperatures do not underflow.
inline Tensor sharpen(const Tensor& q, double tau) {
  if (!(tau > 0.0)) throw DomainError("sharpen: tau must be > 0");
  Tensor out(q.shape());
  const double inv_tau = 1.0 / tau;
  std::vector<double> logs(q.cols());
  for (std::size_t r = 0; r < q.rows(); ++r) {
    const auto row = q.row(r);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] < 0.0) throw DomainError("sharpen: negative probability");
      logs[j] = row[j] > 0.0 ? inv_tau * std::log(row[j]) : -std::numeric_limits<double>::infinity();
      m = std::max(m, logs[j]);
    }
    if (!std::isfinite(m)) throw DomainError("sharpen: all-zero row");
    auto o = out.row(r);
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      o[j] = std::exp(logs[j] - m);
      sum += o[j];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

}  // namespace mixuplr
