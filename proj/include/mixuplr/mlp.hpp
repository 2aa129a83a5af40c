#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixuplr/error.hpp"
#include "mixuplr/loss_heads.hpp"
#include "mixuplr/numeric.hpp"
#include "mixuplr/random.hpp"
#include "mixuplr/tensor.hpp"

namespace mixuplr {

enum class Activation : std::uint32_t { relu = 0, tanh = 1 };

inline std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw DomainError("unknown activation: " + std::string(name));
}

/// Layer widths (input, hidden..., outputs). The activation applies to hidden
/// layers only; the last layer emits raw logits.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu;

  std::size_t layer_count() const noexcept { return widths.size() - 1; }
  std::size_t input_dim() const noexcept { return widths.front(); }
  std::size_t output_dim() const noexcept { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) throw DomainError("MlpSpec needs at least input and output widths");
    for (std::size_t w : widths) {
      if (w == 0) throw DomainError("MlpSpec widths must be >= 1");
    }
  }

  // Parameter layout is layer-major: for each layer, the [out x in] weight
  // matrix in row-major order, followed by its bias of length out.
  struct LayerSlice {
    std::size_t weights;
    std::size_t bias;
    std::size_t in;
    std::size_t out;
  };

  LayerSlice layer(std::size_t l) const noexcept {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < l; ++k) offset += widths[k + 1] * (widths[k] + 1);
    return {offset, offset + widths[l + 1] * widths[l], widths[l], widths[l + 1]};
  }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) n += widths[k + 1] * (widths[k] + 1);
    return n;
  }

  bool operator==(const MlpSpec&) const = default;
};

using ParamVector = std::vector<double>;

/// He-normal weights for relu, Glorot-normal for tanh, zero biases.
inline ParamVector init_params(const MlpSpec& spec, RngState& rng) {
  spec.validate();
  ParamVector p(spec.param_count(), 0.0);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto s = spec.layer(l);
    const double std_dev = spec.activation == Activation::relu
                               ? std::sqrt(2.0 / static_cast<double>(s.in))
                               : std::sqrt(2.0 / static_cast<double>(s.in + s.out));
    for (std::size_t i = 0; i < s.out * s.in; ++i) p[s.weights + i] = std_dev * rng.normal();
  }
  return p;
}

/// Intermediate values of one forward pass. activations[0] is the input,
/// pre[l] the pre-activation of layer l, activations[l + 1] its output.
struct ForwardTrace {
  std::vector<Tensor> pre;
  std::vector<Tensor> activations;

  const Tensor& logits() const { return activations.back(); }
};

struct Backprop {
  ParamVector d_params;
  Tensor d_input;
};

struct GradBundle {
  ParamVector d_params;
  Tensor d_input;
  double loss_value = 0.0;
};

/// Which scalar output the input-gradient penalty differentiates.
struct OutputSelector {
  static constexpr std::size_t kMaxLogit = static_cast<std::size_t>(-1);
  std::size_t coordinate = kMaxLogit;
};

struct InputGradientPenalty {
  double value = 0.0;
  ParamVector d_params;
  Tensor input_gradients;  // per-row gradient of the selected output
};

/// Multilayer perceptron f(x; theta) with hand-written reverse mode.
class Mlp {
 public:
  Mlp(MlpSpec spec, ParamVector params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (params_.size() != spec_.param_count()) {
      throw ShapeError("Mlp: parameter vector has " + std::to_string(params_.size()) + " entries, spec needs " +
                       std::to_string(spec_.param_count()));
    }
  }

  static Mlp initialized(MlpSpec spec, RngState& rng) {
    auto params = init_params(spec, rng);
    return Mlp(std::move(spec), std::move(params));
  }

  const MlpSpec& spec() const noexcept { return spec_; }
  const ParamVector& params() const noexcept { return params_; }
  ParamVector& mutable_params() noexcept { return params_; }
  std::size_t input_dim() const noexcept { return spec_.input_dim(); }
  std::size_t output_dim() const noexcept { return spec_.output_dim(); }

  Tensor forward(const Tensor& x) const { return std::move(trace(x).activations.back()); }

  ForwardTrace trace(const Tensor& x) const {
    check_input(x);
    ForwardTrace t;
    const std::size_t layers = spec_.layer_count();
    t.pre.reserve(layers);
    t.activations.reserve(layers + 1);
    t.activations.push_back(x.rank() == 2 ? x : Tensor({1, x.size()}, x.data()));
    for (std::size_t l = 0; l < layers; ++l) {
      t.pre.push_back(affine(l, t.activations.back()));
      if (l + 1 < layers) {
        Tensor a = t.pre.back();
        for (double& v : a.values()) v = activate(v);
        t.activations.push_back(std::move(a));
      } else {
        t.activations.push_back(t.pre.back());
      }
    }
    MIXUPLR_ASSERT_FINITE(t.activations.back());
    return t;
  }

  /// Pulls d(loss)/d(logits) back to parameters and inputs.
  Backprop backward(const ForwardTrace& t, const Tensor& d_logits) const {
    require_same_shape(t.logits(), d_logits, "Mlp::backward");
    Backprop out{ParamVector(params_.size(), 0.0), Tensor{}};
    Tensor delta = d_logits;
    for (std::size_t l = spec_.layer_count(); l-- > 0;) {
      accumulate_layer_grads(l, delta, t.activations[l], out.d_params);
      Tensor d_a = pull_back(l, delta);
      if (l > 0) {
        const Tensor& z = t.pre[l - 1];
        for (std::size_t i = 0; i < d_a.size(); ++i) d_a[i] *= activate_grad(z[i]);
        delta = std::move(d_a);
      } else {
        out.d_input = std::move(d_a);
      }
    }
    return out;
  }

  GradBundle loss_and_grads(const Tensor& x, const LossHead& head) const {
    const auto t = trace(x);
    auto h = evaluate_head(head, t.logits());
    auto bp = backward(t, h.d_logits);
    return {std::move(bp.d_params), std::move(bp.d_input), h.value};
  }

  Tensor input_gradient(const Tensor& x, const LossHead& head) const { return loss_and_grads(x, head).d_input; }

  /// Vector-Jacobian product with respect to the input: rows of g^T J_f(x).
  Tensor input_vjp(const Tensor& x, const Tensor& d_logits) const { return backward(trace(x), d_logits).d_input; }

  /// mean_b (||grad_x s(x_b)|| - target)^2 and its parameter gradient, where s
  /// is the selected output logit. The parameter gradient differentiates
  /// through the backward pass itself (second-order reverse mode).
  InputGradientPenalty input_gradient_penalty(const Tensor& x, OutputSelector selector, double target) const {
    const auto t = trace(x);
    const std::size_t layers = spec_.layer_count();
    const std::size_t b = t.logits().rows();
    InputGradientPenalty res{0.0, ParamVector(params_.size(), 0.0), Tensor{}};

    // Backward pass for the selected output, keeping every intermediate.
    // g[l] = d s / d pre[l]; ga[l] = d s / d activations[l].
    std::vector<Tensor> g(layers), ga(layers);
    g[layers - 1] = Tensor(t.logits().shape());
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t j = selector.coordinate == OutputSelector::kMaxLogit ? argmax(t.logits().row(r))
                                                                           : selector.coordinate;
      if (j >= spec_.output_dim()) throw DomainError("input_gradient_penalty: output coordinate out of range");
      g[layers - 1](r, j) = 1.0;
    }
    for (std::size_t l = layers; l-- > 0;) {
      ga[l] = pull_back(l, g[l]);
      if (l > 0) {
        g[l - 1] = ga[l];
        const Tensor& z = t.pre[l - 1];
        for (std::size_t i = 0; i < z.size(); ++i) g[l - 1][i] *= activate_grad(z[i]);
      }
    }
    res.input_gradients = ga[0];

    // u = dP / d ga[l], propagated forward through the backward pass.
    const double inv_b = b ? 1.0 / static_cast<double>(b) : 0.0;
    Tensor u(ga[0].shape());
    for (std::size_t r = 0; r < b; ++r) {
      const auto gr = ga[0].row(r);
      const double norm = l2_norm(gr);
      const double diff = norm - target;
      res.value += inv_b * diff * diff;
      if (norm > 0.0) {
        auto ur = u.row(r);
        for (std::size_t i = 0; i < gr.size(); ++i) ur[i] = inv_b * 2.0 * diff * gr[i] / norm;
      }
    }
    std::vector<Tensor> inject(layers);  // direct dP / d pre[l] contributions
    for (std::size_t l = 0; l < layers; ++l) {
      const auto s = spec_.layer(l);
      // ga[l] = g[l] W_l  =>  dW_l[k, i] += g[l][k] u[i];  dg[l] = u W_l^T
      Tensor dg({b, s.out});
      for (std::size_t r = 0; r < b; ++r) {
        const auto gr = g[l].row(r);
        const auto ur = u.row(r);
        auto dgr = dg.row(r);
        for (std::size_t k = 0; k < s.out; ++k) {
          const double* w = params_.data() + s.weights + k * s.in;
          double* dw = res.d_params.data() + s.weights + k * s.in;
          double acc = 0.0;
          for (std::size_t i = 0; i < s.in; ++i) {
            dw[i] += gr[k] * ur[i];
            acc += w[i] * ur[i];
          }
          dgr[k] = acc;
        }
      }
      if (l + 1 == layers) break;  // g[last] is a constant one-hot
      // g[l] = ga[l + 1] * act'(pre[l])
      const Tensor& z = t.pre[l];
      Tensor next_u({b, s.out});
      inject[l] = Tensor({b, s.out});
      for (std::size_t i = 0; i < z.size(); ++i) {
        next_u[i] = dg[i] * activate_grad(z[i]);
        inject[l][i] = dg[i] * ga[l + 1][i] * activate_second(z[i]);
      }
      u = std::move(next_u);
    }

    // Route the pre-activation contributions back through the forward pass.
    Tensor delta;
    for (std::size_t l = layers; l-- > 0;) {
      if (l + 1 < layers) {
        Tensor d = pull_back(l + 1, delta);
        const Tensor& z = t.pre[l];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = d[i] * activate_grad(z[i]) + inject[l][i];
        delta = std::move(d);
      } else {
        delta = Tensor({b, spec_.layer(l).out});
      }
      accumulate_layer_grads(l, delta, t.activations[l], res.d_params);
    }
    return res;
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.rank() != 1 && x.rank() != 2) throw ShapeError("Mlp: input must be a vector or a batch");
    if (x.cols() != spec_.input_dim()) {
      throw ShapeError("Mlp: input width " + std::to_string(x.cols()) + " does not match spec input " +
                       std::to_string(spec_.input_dim()));
    }
  }

  double activate(double z) const noexcept {
    return spec_.activation == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
  }

  // relu'(0) := 0
  double activate_grad(double z) const noexcept {
    if (spec_.activation == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
    const double th = std::tanh(z);
    return 1.0 - th * th;
  }

  double activate_second(double z) const noexcept {
    if (spec_.activation == Activation::relu) return 0.0;
    const double th = std::tanh(z);
    return -2.0 * th * (1.0 - th * th);
  }

  // pre = a W^T + b
  Tensor affine(std::size_t l, const Tensor& a) const {
    const auto s = spec_.layer(l);
    const std::size_t b = a.rows();
    Tensor z({b, s.out});
    for (std::size_t r = 0; r < b; ++r) {
      const double* ar = a.row(r).data();
      double* zr = z.row(r).data();
      for (std::size_t k = 0; k < s.out; ++k) {
        const double* w = params_.data() + s.weights + k * s.in;
        double acc = params_[s.bias + k];
        for (std::size_t i = 0; i < s.in; ++i) acc += w[i] * ar[i];
        zr[k] = acc;
      }
    }
    return z;
  }

  // d_a = delta W
  Tensor pull_back(std::size_t l, const Tensor& delta) const {
    const auto s = spec_.layer(l);
    const std::size_t b = delta.rows();
    Tensor d_a({b, s.in});
    for (std::size_t r = 0; r < b; ++r) {
      const double* dr = delta.row(r).data();
      double* out = d_a.row(r).data();
      for (std::size_t k = 0; k < s.out; ++k) {
        const double dk = dr[k];
        if (dk == 0.0) continue;
        const double* w = params_.data() + s.weights + k * s.in;
        for (std::size_t i = 0; i < s.in; ++i) out[i] += dk * w[i];
      }
    }
    return d_a;
  }

  void accumulate_layer_grads(std::size_t l, const Tensor& delta, const Tensor& a, ParamVector& grads) const {
    const auto s = spec_.layer(l);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const double* dr = delta.row(r).data();
      const double* ar = a.row(r).data();
      for (std::size_t k = 0; k < s.out; ++k) {
        const double dk = dr[k];
        if (dk == 0.0) continue;
        double* dw = grads.data() + s.weights + k * s.in;
        for (std::size_t i = 0; i < s.in; ++i) dw[i] += dk * ar[i];
        grads[s.bias + k] += dk;
      }
    }
  }

  MlpSpec spec_;
  ParamVector params_;
};

}  // namespace mixuplr
