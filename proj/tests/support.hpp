#pragma once

// Shared oracles for the unit and acceptance suites: tiny closed-form models,
// central finite differences and random network/loss configurations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mixuplr/mixuplr.hpp"

namespace mixuplr::testing {

/// f(x) = W x + b, a model whose every property is known in closed form.
struct LinearMap {
  Tensor w;  // out x in
  std::vector<double> b;

  std::size_t input_dim() const { return w.cols(); }
  std::size_t output_dim() const { return w.rows(); }

  Tensor forward(const Tensor& x_in) const {
    const Tensor x = x_in.rank() == 2 ? x_in : Tensor({1, x_in.size()}, x_in.data());
    Tensor z({x.rows(), w.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t k = 0; k < w.rows(); ++k) {
        double s = b.empty() ? 0.0 : b[k];
        for (std::size_t i = 0; i < w.cols(); ++i) s += w(k, i) * x(r, i);
        z(r, k) = s;
      }
    }
    return z;
  }

  Tensor input_vjp(const Tensor& x, const Tensor& d_logits) const {
    Tensor g({x.rows(), w.cols()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t i = 0; i < w.cols(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < w.rows(); ++k) s += d_logits(r, k) * w(k, i);
        g(r, i) = s;
      }
    }
    return g;
  }
};

/// Scalar f(x) = 0.5 x^T A x with symmetric A.
struct Quadratic {
  Tensor a;

  std::size_t input_dim() const { return a.rows(); }
  std::size_t output_dim() const { return 1; }

  Tensor forward(const Tensor& x) const {
    Tensor z({x.rows(), 1});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) s += 0.5 * x(r, i) * a(i, j) * x(r, j);
      }
      z(r, 0) = s;
    }
    return z;
  }

  Tensor input_vjp(const Tensor& x, const Tensor& d_logits) const {
    Tensor g({x.rows(), a.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x(r, j);
        g(r, i) = d_logits(r, 0) * s;
      }
    }
    return g;
  }
};

inline Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double sigma, RngState& rng) {
  Tensor t({rows, cols});
  for (double& v : t.values()) v = sigma * rng.normal();
  return t;
}

inline Tensor random_simplex_rows(std::size_t rows, std::size_t cols, RngState& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double& v : t.row(r)) s += (v = -std::log(rng.uniform_open()));
    for (double& v : t.row(r)) v /= s;
  }
  return t;
}

/// Elementwise relative error with a denominator floor, the usual
/// finite-difference acceptance metric.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
  return worst;
}

/// Central differences of f over every entry of `point` (restored afterwards).
inline std::vector<double> central_differences(std::span<double> point, const std::function<double()>& f, double h) {
  std::vector<double> g(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double keep = point[i];
    point[i] = keep + h;
    const double up = f();
    point[i] = keep - h;
    const double down = f();
    point[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Five-point stencil, O(h^4) truncation. Used where the loss is a difference
/// of nearby outputs and plain central differences at small h drown in rounding.
inline std::vector<double> five_point_differences(std::span<double> point, const std::function<double()>& f, double h) {
  std::vector<double> g(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double keep = point[i];
    double v[4];
    const double offsets[4] = {2.0 * h, h, -h, -2.0 * h};
    for (int k = 0; k < 4; ++k) {
      point[i] = keep + offsets[k];
      v[k] = f();
    }
    point[i] = keep;
    g[i] = (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
  }
  return g;
}

inline constexpr double kFivePointStep = 1e-3;

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-6;
/// Denominator floor for relative error; components smaller than this are
/// compared on an absolute scale of kFdTolerance * floor.
inline constexpr double kFdFloor = 1e-4;
/// Configurations with a hidden pre-activation this close to a ReLU kink are
/// redrawn, since the derivative there is one-sided.
inline constexpr double kKinkMargin = 1e-4;

struct GradCase {
  Mlp model;
  Tensor x;
  LossHead head;
  std::string head_name;
};

inline LossHead random_head(std::size_t kind, std::size_t b, std::size_t s, RngState& rng, std::string& name) {
  switch (kind % 4) {
    case 0: name = "soft-ce"; return SoftTargetCrossEntropy{random_simplex_rows(b, s, rng), {}};
    case 1: name = "mean-squared-prob"; return MeanSquaredProbability{random_simplex_rows(b, s, rng), {}};
    case 2: name = "kl-to-reference"; return KlToReference{random_simplex_rows(b, s, rng)};
    default: {
      name = "scalar-output-sum";
      std::vector<double> w(s);
      for (double& v : w) v = rng.normal();
      return ScalarOutputSum{w};
    }
  }
}

inline bool near_relu_kink(const Mlp& model, const Tensor& x, double margin = kKinkMargin) {
  if (model.spec().activation != Activation::relu) return false;
  const auto t = model.trace(x);
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) {
    for (double z : t.pre[l].values()) {
      if (std::abs(z) < margin) return true;
    }
  }
  return false;
}

/// Random net (<= 3 hidden layers, widths <= 16, batch <= 8) and loss head,
/// redrawn while any hidden pre-activation sits within kKinkMargin of a kink.
inline GradCase random_grad_case(RngState& rng, std::size_t head_kind) {
  for (;;) {
    MlpSpec spec;
    const std::size_t hidden = rng.below(4);
    spec.widths.push_back(1 + rng.below(4));
    for (std::size_t l = 0; l < hidden; ++l) spec.widths.push_back(1 + rng.below(16));
    spec.widths.push_back(1 + rng.below(5));
    spec.activation = rng.below(2) ? Activation::tanh : Activation::relu;
    Mlp model = Mlp::initialized(spec, rng);
    for (double& p : model.mutable_params()) p += 0.1 * rng.normal();  // nonzero biases
    const std::size_t b = 1 + rng.below(8);
    Tensor x = gaussian_matrix(b, spec.input_dim(), 1.0, rng);
    if (near_relu_kink(model, x)) continue;
    std::string name;
    LossHead head = random_head(head_kind, b, spec.output_dim(), rng, name);
    return {std::move(model), std::move(x), std::move(head), name};
  }
}

struct GradCheck {
  double param_error = 0.0;
  double input_error = 0.0;
};

inline GradCheck check_gradients(const GradCase& c) {
  const GradBundle g = c.model.loss_and_grads(c.x, c.head);
  Mlp probe = c.model;
  Tensor x = c.x;
  const auto loss = [&] { return evaluate_head(c.head, probe.forward(x)).value; };
  const auto np = central_differences(probe.mutable_params(), loss, kFdStep);
  const auto nx = central_differences(x.values(), loss, kFdStep);
  return {max_relative_error(g.d_params, np, kFdFloor), max_relative_error(g.d_input.values(), nx, kFdFloor)};
}

}  // namespace mixuplr::testing
