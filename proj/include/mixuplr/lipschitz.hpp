#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mixuplr/error.hpp"
#include "mixuplr/mixup.hpp"
#include "mixuplr/mlp.hpp"
#include "mixuplr/numeric.hpp"
#include "mixuplr/random.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

/// A BatchModel that can also pull output cotangents back to its inputs.
template <class M>
concept DifferentiableModel = BatchModel<M> && requires(const M& m, const Tensor& x, const Tensor& g) {
  { m.input_vjp(x, g) } -> std::convertible_to<Tensor>;
  { m.input_dim() } -> std::convertible_to<std::size_t>;
  { m.output_dim() } -> std::convertible_to<std::size_t>;
};

/// Output-space distance d_Y. Input-space distance is always Euclidean.
enum class OutputDistance { kl_softmax, l2_logits };

inline OutputDistance parse_output_distance(std::string_view name) {
  if (name == "kl-softmax") return OutputDistance::kl_softmax;
  if (name == "l2-logits") return OutputDistance::l2_logits;
  throw DomainError("unknown output distance: " + std::string(name));
}

inline std::string_view output_distance_name(OutputDistance d) {
  return d == OutputDistance::kl_softmax ? "kl-softmax" : "l2-logits";
}

/// How the ALP term is penalized: (ratio - gamma) or (ratio - gamma)^2.
enum class AlpForm { linear, squared };

struct AlpConfig {
  double eps_r = 0.1;
  double xi = 1e-6;
  std::size_t k_iters = 1;
  double gamma = 0.0;
  OutputDistance d_y = OutputDistance::kl_softmax;
  AlpForm form = AlpForm::linear;
  // When set, rows whose power-iteration gradient stays exactly zero keep their
  // random direction instead of raising. Training uses this; rows on a flat
  // plateau contribute a zero ratio either way.
  bool keep_flat_rows = false;

  void validate() const {
    if (!(eps_r > 0.0) || !(xi > 0.0)) throw DomainError("AlpConfig: eps_r and xi must be > 0");
    if (k_iters < 1) throw DomainError("AlpConfig: k_iters must be >= 1");
  }
};

// ---- output distances -----------------------------------------------------

inline double output_distance(std::span<const double> z1, std::span<const double> z2, OutputDistance kind) {
  if (z1.size() != z2.size()) throw ShapeError("output_distance: shape mismatch");
  if (kind == OutputDistance::l2_logits) return l2_distance(z1, z2);
  std::vector<double> p(z1.size()), q(z2.size());
  softmax_into(z1, p);
  softmax_into(z2, q);
  return kl_divergence(p, q);
}

/// Gradients of output_distance with respect to both logit vectors.
inline void output_distance_grads(std::span<const double> z1, std::span<const double> z2, OutputDistance kind,
                                  std::span<double> dz1, std::span<double> dz2) {
  const std::size_t s = z1.size();
  if (kind == OutputDistance::l2_logits) {
    const double dist = l2_distance(z1, z2);
    for (std::size_t j = 0; j < s; ++j) {
      const double g = dist > 0.0 ? (z2[j] - z1[j]) / dist : 0.0;
      dz2[j] = g;
      dz1[j] = -g;
    }
    return;
  }
  std::vector<double> logp(s), logq(s);
  log_softmax_into(z1, logp);
  log_softmax_into(z2, logq);
  const double log_floor = std::log(kProbabilityFloor);
  double unfloored_mass = 0.0, mean_v = 0.0;
  std::vector<double> v(s, 0.0);
  for (std::size_t j = 0; j < s; ++j) {
    const double p = std::exp(logp[j]);
    if (p <= 0.0) continue;
    const bool floored = logq[j] < log_floor;
    v[j] = logp[j] - (floored ? log_floor : logq[j]);
    mean_v += p * v[j];
    if (!floored) unfloored_mass += p;
  }
  for (std::size_t j = 0; j < s; ++j) {
    const double p = std::exp(logp[j]);
    const double q = std::exp(logq[j]);
    dz1[j] = p * (v[j] - mean_v);
    dz2[j] = q * unfloored_mass - (logq[j] >= log_floor ? p : 0.0);
  }
}

namespace detail {
inline Tensor as_row(const Tensor& x) { return x.rank() == 2 ? x : Tensor({1, x.size()}, x.data()); }
}  // namespace detail

/// d_Y(f(x1), f(x2)) / ||x1 - x2|| for a single pair of points.
template <BatchModel Model>
double lipschitz_ratio(const Model& model, const Tensor& x1, const Tensor& x2, OutputDistance kind) {
  const Tensor a = detail::as_row(x1), b = detail::as_row(x2);
  if (a.rows() != 1 || b.rows() != 1) throw ShapeError("lipschitz_ratio: expects single points");
  const double dx = l2_distance(a, b);
  if (dx < 1e-12) throw DomainError("lipschitz_ratio: coincident points");
  const Tensor za = model.forward(a), zb = model.forward(b);
  return output_distance(za.row(0), zb.row(0), kind) / dx;
}

// ---- adversarial direction ------------------------------------------------

namespace detail {

template <DifferentiableModel Model>
Tensor distance_input_gradient(const Model& model, const Tensor& x, const Tensor& z_ref, const Tensor& d, double xi,
                               OutputDistance kind) {
  Tensor probe = x;
  for (std::size_t i = 0; i < probe.size(); ++i) probe[i] += xi * d[i];
  const Tensor z = model.forward(probe);
  Tensor dz(z.shape()), unused(z.cols() == 0 ? Shape{0} : Shape{z.cols()});
  for (std::size_t r = 0; r < z.rows(); ++r) output_distance_grads(z_ref.row(r), z.row(r), kind, unused.values(), dz.row(r));
  return model.input_vjp(probe, dz);
}

inline void random_unit_row(std::span<double> row, RngState& rng) {
  double n = 0.0;
  do {
    for (double& v : row) v = rng.normal();
    n = l2_norm(row);
  } while (n == 0.0);
  for (double& v : row) v /= n;
}

}  // namespace detail

/// Per-row perturbation of norm eps_r that approximately maximizes
/// d_Y(f(x), f(x + r)). Starts from a random unit direction and applies
/// k_iters power-iteration steps d <- normalize(grad_d d_Y(f(x), f(x + xi d))),
/// holding f(x) fixed.
template <DifferentiableModel Model>
Tensor adv_perturbation(const Model& model, const Tensor& x_batch, const AlpConfig& cfg, RngState& rng) {
  cfg.validate();
  const Tensor x = detail::as_row(x_batch);
  const std::size_t b = x.rows();
  const Tensor z_ref = model.forward(x);
  Tensor d(x.shape());
  for (std::size_t r = 0; r < b; ++r) detail::random_unit_row(d.row(r), rng);

  constexpr double kTiny = std::numeric_limits<double>::min();
  for (std::size_t it = 0; it < cfg.k_iters; ++it) {
    Tensor grad = detail::distance_input_gradient(model, x, z_ref, d, cfg.xi, cfg.d_y);
    for (std::size_t r = 0; r < b; ++r) {
      auto g = grad.row(r);
      double n = l2_norm(g);
      if (!(n >= kTiny) || !std::isfinite(n)) {
        // Flat response: one fresh random start for this row, then give up.
        Tensor xr = row_as_batch(x, r), zr = row_as_batch(z_ref, r), dr({1, x.cols()});
        detail::random_unit_row(dr.row(0), rng);
        Tensor gr = detail::distance_input_gradient(model, xr, zr, dr, cfg.xi, cfg.d_y);
        n = l2_norm(gr.row(0));
        if (!(n >= kTiny) || !std::isfinite(n)) {
          if (!cfg.keep_flat_rows) throw DomainError("adv_perturbation: zero gradient at row " + std::to_string(r));
          std::copy(dr.row(0).begin(), dr.row(0).end(), d.row(r).begin());
          continue;
        }
        std::copy(gr.row(0).begin(), gr.row(0).end(), g.begin());
      }
      auto dr = d.row(r);
      for (std::size_t j = 0; j < g.size(); ++j) dr[j] = g[j] / n;
    }
  }
  for (std::size_t r = 0; r < b; ++r) {
    auto dr = d.row(r);
    const double n = l2_norm(dr);  // renormalize so the row norm is eps_r to rounding
    for (double& v : dr) v = cfg.eps_r * v / n;
  }
  return d;
}

// ---- ALP loss -------------------------------------------------------------

struct AlpTerm {
  double value = 0.0;
  ParamVector d_params;
};

namespace detail {
inline double alp_row_term(double ratio, double gamma, AlpForm form) {
  const double v = ratio - gamma;
  return form == AlpForm::squared ? v * v : v;
}
}  // namespace detail

/// mean_b penalty( d_Y(f(x_b), f(x_b + r_b)) / ||r_b|| - gamma ).
template <BatchModel Model>
double alp_loss(const Model& model, const Tensor& x_batch, const Tensor& r_adv, double gamma,
                OutputDistance kind = OutputDistance::kl_softmax, AlpForm form = AlpForm::linear) {
  const Tensor x = detail::as_row(x_batch);
  const Tensor r = detail::as_row(r_adv);
  require_same_shape(x, r, "alp_loss");
  Tensor xp = x;
  for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += r[i];
  const Tensor z1 = model.forward(x), z2 = model.forward(xp);
  double total = 0.0;
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const double rn = l2_norm(r.row(b));
    if (!(rn > 0.0)) throw DomainError("alp_loss: zero perturbation row");
    total += detail::alp_row_term(output_distance(z1.row(b), z2.row(b), kind) / rn, gamma, form);
  }
  return x.rows() ? total / static_cast<double>(x.rows()) : 0.0;
}

/// alp_loss and its gradient with respect to the parameters, differentiating
/// through both f(x) and f(x + r).
inline AlpTerm alp_loss_and_grads(const Mlp& model, const Tensor& x_batch, const Tensor& r_adv, double gamma,
                                  OutputDistance kind = OutputDistance::kl_softmax,
                                  AlpForm form = AlpForm::linear) {
  const Tensor x = detail::as_row(x_batch);
  const Tensor r = detail::as_row(r_adv);
  require_same_shape(x, r, "alp_loss_and_grads");
  Tensor xp = x;
  for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += r[i];
  const auto t1 = model.trace(x);
  const auto t2 = model.trace(xp);
  const std::size_t b = x.rows();
  Tensor dz1(t1.logits().shape()), dz2(t2.logits().shape());
  AlpTerm out{0.0, ParamVector(model.params().size(), 0.0)};
  if (b == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double rn = l2_norm(r.row(i));
    if (!(rn > 0.0)) throw DomainError("alp_loss: zero perturbation row");
    const double ratio = output_distance(t1.logits().row(i), t2.logits().row(i), kind) / rn;
    out.value += inv_b * detail::alp_row_term(ratio, gamma, form);
    const double outer = inv_b / rn * (form == AlpForm::squared ? 2.0 * (ratio - gamma) : 1.0);
    output_distance_grads(t1.logits().row(i), t2.logits().row(i), kind, dz1.row(i), dz2.row(i));
    for (double& v : dz1.row(i)) v *= outer;
    for (double& v : dz2.row(i)) v *= outer;
  }
  const auto g1 = model.backward(t1, dz1);
  const auto g2 = model.backward(t2, dz2);
  for (std::size_t i = 0; i < out.d_params.size(); ++i) out.d_params[i] = g1.d_params[i] + g2.d_params[i];
  return out;
}

/// Free-pair Lipschitz penalty mean_b penalty(d_Y / d_X - gamma) over arbitrary
/// pairs. Diagnostic only; training uses the adversarial pair.
template <BatchModel Model>
double free_pair_penalty(const Model& model, const Tensor& x1, const Tensor& x2, double gamma, OutputDistance kind,
                         AlpForm form = AlpForm::linear) {
  require_same_shape(x1, x2, "free_pair_penalty");
  double total = 0.0;
  for (std::size_t i = 0; i < x1.rows(); ++i) {
    total += detail::alp_row_term(lipschitz_ratio(model, row_as_batch(x1, i), row_as_batch(x2, i), kind), gamma, form);
  }
  return x1.rows() ? total / static_cast<double>(x1.rows()) : 0.0;
}

// ---- gradient penalty -----------------------------------------------------

/// mean_b (||grad_x s(x_b)|| - target)^2 with s the max logit of each row.
template <DifferentiableModel Model>
double gradient_penalty(const Model& model, const Tensor& x_batch, double target) {
  const Tensor x = detail::as_row(x_batch);
  const Tensor z = model.forward(x);
  Tensor sel(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) sel(r, argmax(z.row(r))) = 1.0;
  const Tensor g = model.input_vjp(x, sel);
  double total = 0.0;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double d = l2_norm(g.row(r)) - target;
    total += d * d;
  }
  return g.rows() ? total / static_cast<double>(g.rows()) : 0.0;
}

inline AlpTerm gradient_penalty_and_grads(const Mlp& model, const Tensor& x_batch, double target) {
  auto p = model.input_gradient_penalty(detail::as_row(x_batch), OutputSelector{}, target);
  return {p.value, std::move(p.d_params)};
}

// ---- empirical Lipschitz estimates ----------------------------------------

/// Draws point pairs from three equally likely families: uniform pairs in the
/// data bounding box inflated by 20%, pairs of distinct data points, and close
/// pairs (x, x + delta) around a data point with ||delta|| = close_radius.
class DomainSampler {
 public:
  explicit DomainSampler(Tensor data, double inflate = 0.2, double close_radius = 1e-3)
      : data_(std::move(data)), close_radius_(close_radius) {
    require_matrix(data_, "DomainSampler data");
    if (data_.rows() == 0) throw DomainError("DomainSampler: empty data");
    const std::size_t d = data_.cols();
    lo_.assign(d, std::numeric_limits<double>::infinity());
    hi_.assign(d, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < data_.rows(); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        lo_[j] = std::min(lo_[j], data_(r, j));
        hi_[j] = std::max(hi_[j], data_(r, j));
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double w = hi_[j] - lo_[j];
      const double pad = w > 0.0 ? 0.5 * inflate * w : 0.5 * inflate;
      lo_[j] -= pad;
      hi_[j] += pad;
    }
  }

  std::size_t dim() const noexcept { return data_.cols(); }
  const std::vector<double>& lower() const noexcept { return lo_; }
  const std::vector<double>& upper() const noexcept { return hi_; }

  /// Writes one pair into a and b; the two points are never coincident.
  void sample_pair(RngState& rng, std::span<double> a, std::span<double> b) const {
    for (;;) {
      switch (rng.below(3)) {
        case 0:
          for (std::size_t j = 0; j < dim(); ++j) {
            a[j] = rng.uniform(lo_[j], hi_[j]);
            b[j] = rng.uniform(lo_[j], hi_[j]);
          }
          break;
        case 1: {
          const auto i = rng.below(data_.rows());
          const auto k = rng.below(data_.rows());
          std::copy(data_.row(i).begin(), data_.row(i).end(), a.begin());
          std::copy(data_.row(k).begin(), data_.row(k).end(), b.begin());
          break;
        }
        default: {
          const auto i = rng.below(data_.rows());
          std::copy(data_.row(i).begin(), data_.row(i).end(), a.begin());
          detail::random_unit_row(b, rng);
          for (std::size_t j = 0; j < dim(); ++j) b[j] = a[j] + close_radius_ * b[j];
          break;
        }
      }
      if (l2_distance(a, b) >= 1e-12) return;
    }
  }

  /// n pairs drawn sequentially, so a longer draw from the same seed extends a shorter one.
  std::pair<Tensor, Tensor> sample_pairs(std::size_t n, RngState& rng) const {
    Tensor a({n, dim()}), b({n, dim()});
    for (std::size_t i = 0; i < n; ++i) sample_pair(rng, a.row(i), b.row(i));
    return {std::move(a), std::move(b)};
  }

 private:
  Tensor data_;
  double close_radius_;
  std::vector<double> lo_, hi_;
};

struct FunctionLipschitzEstimate {
  double k_hat = 0.0;
  std::size_t n_pairs = 0;
  Tensor arg_x1, arg_x2;  // the pair attaining k_hat
};

inline constexpr std::size_t kEstimatorChunk = 1024;

/// Monte-Carlo lower estimate of the Lipschitz constant: the largest ratio over
/// n_pairs sampled pairs.
template <BatchModel Model>
FunctionLipschitzEstimate estimate_function_lipschitz(const Model& model, const DomainSampler& sampler,
                                                      std::size_t n_pairs, RngState& rng,
                                                      OutputDistance kind = OutputDistance::l2_logits) {
  if (n_pairs < 1) throw DomainError("estimate_function_lipschitz: n_pairs must be >= 1");
  const auto [x1, x2] = sampler.sample_pairs(n_pairs, rng);
  FunctionLipschitzEstimate est{0.0, n_pairs, row_as_batch(x1, 0), row_as_batch(x2, 0)};
  for (std::size_t start = 0; start < n_pairs; start += kEstimatorChunk) {
    const std::size_t end = std::min(n_pairs, start + kEstimatorChunk);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor z1 = model.forward(gather_rows(x1, idx));
    const Tensor z2 = model.forward(gather_rows(x2, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double ratio =
          output_distance(z1.row(i), z2.row(i), kind) / l2_distance(x1.row(idx[i]), x2.row(idx[i]));
      if (ratio > est.k_hat) {
        est.k_hat = ratio;
        est.arg_x1 = row_as_batch(x1, idx[i]);
        est.arg_x2 = row_as_batch(x2, idx[i]);
      }
    }
  }
  return est;
}

namespace detail {
/// Rows of the Jacobian of output j at every row of x.
template <DifferentiableModel Model>
Tensor output_gradient(const Model& model, const Tensor& x, std::size_t j) {
  Tensor sel({x.rows(), model.output_dim()});
  for (std::size_t r = 0; r < x.rows(); ++r) sel(r, j) = 1.0;
  return model.input_vjp(x, sel);
}
}  // namespace detail

/// Monte-Carlo lower estimate of the gradient Lipschitz constant L: the
/// largest ||grad f_j(x1) - grad f_j(x2)|| / ||x1 - x2|| over sampled pairs and
/// output coordinates j.
template <DifferentiableModel Model>
double estimate_gradient_lipschitz(const Model& model, const DomainSampler& sampler, std::size_t n_pairs,
                                   RngState& rng) {
  if (n_pairs < 1) throw DomainError("estimate_gradient_lipschitz: n_pairs must be >= 1");
  const auto [x1, x2] = sampler.sample_pairs(n_pairs, rng);
  double l_hat = 0.0;
  for (std::size_t start = 0; start < n_pairs; start += kEstimatorChunk) {
    const std::size_t end = std::min(n_pairs, start + kEstimatorChunk);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor a = gather_rows(x1, idx), b = gather_rows(x2, idx);
    for (std::size_t j = 0; j < model.output_dim(); ++j) {
      const Tensor ga = detail::output_gradient(model, a, j);
      const Tensor gb = detail::output_gradient(model, b, j);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        l_hat = std::max(l_hat, l2_distance(ga.row(i), gb.row(i)) / l2_distance(a.row(i), b.row(i)));
      }
    }
  }
  return l_hat;
}

struct LipschitzReport {
  double k_hat = 0.0;
  double l_hat = 0.0;
  std::size_t n_pairs = 0;
  Tensor max_ratio_x1, max_ratio_x2;
};

template <DifferentiableModel Model>
LipschitzReport lipschitz_report(const Model& model, const DomainSampler& sampler, std::size_t n_pairs, RngState& rng,
                                 OutputDistance kind = OutputDistance::l2_logits) {
  RngState k_rng = rng.split(1), l_rng = rng.split(2);
  auto k = estimate_function_lipschitz(model, sampler, n_pairs, k_rng, kind);
  const double l = estimate_gradient_lipschitz(model, sampler, n_pairs, l_rng);
  return {k.k_hat, l, n_pairs, std::move(k.arg_x1), std::move(k.arg_x2)};
}

// ---- convexity-gap audit --------------------------------------------------

/// Absolute tolerance before a bound check counts as a violation.
inline constexpr double kAuditTolerance = 1e-9;
/// Multiplier applied to a sampled L-hat before auditing against it.
inline constexpr double kAuditSafetyFactor = 1.05;

/// For each output coordinate j, the signed margin
///   f_j(a x1 + (1-a) x2) - (a f_j(x1) + (1-a) f_j(x2)) - a (1-a) L / 2 ||x1 - x2||^2,
/// which is <= 0 whenever f_j has an L-Lipschitz gradient.
template <BatchModel Model>
std::vector<double> convexity_gap_margins(const Model& model, const Tensor& x1, const Tensor& x2, double alpha,
                                          double l_bound) {
  const Tensor a = detail::as_row(x1), b = detail::as_row(x2);
  require_same_shape(a, b, "convexity_gap_margins");
  Tensor m(a.shape());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = alpha * a[i] + (1.0 - alpha) * b[i];
  const Tensor fa = model.forward(a), fb = model.forward(b), fm = model.forward(m);
  const double dist = l2_distance(a, b);
  const double rhs = alpha * (1.0 - alpha) * l_bound / 2.0 * dist * dist;
  std::vector<double> margins(fa.cols());
  for (std::size_t j = 0; j < fa.cols(); ++j) {
    margins[j] = fm(0, j) - (alpha * fa(0, j) + (1.0 - alpha) * fb(0, j)) - rhs;
  }
  return margins;
}

struct ConvexityAuditReport {
  double violation_rate = 0.0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  std::size_t n_triples = 0;
  std::size_t n_checks = 0;
  std::size_t n_violations = 0;
};

/// Samples (x1, x2, alpha ~ U[0,1]) triples and checks the interpolation bound
/// on every output coordinate against l_bound.
template <BatchModel Model>
ConvexityAuditReport prop1_audit(const Model& model, const DomainSampler& sampler, double l_bound,
                                 std::size_t n_triples, RngState& rng) {
  ConvexityAuditReport rep;
  rep.n_triples = n_triples;
  if (n_triples == 0) return rep;
  const std::size_t d = sampler.dim();
  Tensor x1({n_triples, d}), x2({n_triples, d}), xm({n_triples, d});
  std::vector<double> alphas(n_triples);
  for (std::size_t i = 0; i < n_triples; ++i) {
    sampler.sample_pair(rng, x1.row(i), x2.row(i));
    alphas[i] = rng.uniform();
    for (std::size_t k = 0; k < d; ++k) xm(i, k) = alphas[i] * x1(i, k) + (1.0 - alphas[i]) * x2(i, k);
  }
  const Tensor f1 = model.forward(x1), f2 = model.forward(x2), fm = model.forward(xm);
  for (std::size_t i = 0; i < n_triples; ++i) {
    const double a = alphas[i];
    const double dist = l2_distance(x1.row(i), x2.row(i));
    const double rhs = a * (1.0 - a) * l_bound / 2.0 * dist * dist;
    for (std::size_t j = 0; j < f1.cols(); ++j) {
      const double margin = fm(i, j) - (a * f1(i, j) + (1.0 - a) * f2(i, j)) - rhs;
      rep.worst_margin = std::max(rep.worst_margin, margin);
      ++rep.n_checks;
      if (margin > kAuditTolerance) ++rep.n_violations;
    }
  }
  rep.violation_rate = static_cast<double>(rep.n_violations) / static_cast<double>(rep.n_checks);
  return rep;
}

}  // namespace mixuplr
