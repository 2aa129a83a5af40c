#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mixuplr/datasets.hpp"
#include "mixuplr/error.hpp"
#include "mixuplr/format.hpp"
#include "mixuplr/lipschitz.hpp"
#include "mixuplr/loss_heads.hpp"
#include "mixuplr/mixup.hpp"
#include "mixuplr/mlp.hpp"
#include "mixuplr/optimizer.hpp"
#include "mixuplr/random.hpp"

namespace mixuplr {

enum class TrainMode { supervised_only, mixup_only, mixup_lr, mixup_gp };

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "supervised-only") return TrainMode::supervised_only;
  if (s == "mixup-only") return TrainMode::mixup_only;
  if (s == "mixup-lr") return TrainMode::mixup_lr;
  if (s == "mixup-gp") return TrainMode::mixup_gp;
  throw DomainError("unknown training mode: " + std::string(s));
}

inline std::string_view train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::supervised_only: return "supervised-only";
    case TrainMode::mixup_only: return "mixup-only";
    case TrainMode::mixup_lr: return "mixup-lr";
    case TrainMode::mixup_gp: return "mixup-gp";
  }
  return "?";
}

enum class EvalTarget { unlabeled_pool, holdout };

inline EvalTarget parse_eval_target(std::string_view s) {
  if (s == "unlabeled-pool") return EvalTarget::unlabeled_pool;
  if (s == "holdout") return EvalTarget::holdout;
  throw DomainError("unknown eval target: " + std::string(s));
}

inline std::string_view eval_target_name(EvalTarget t) {
  return t == EvalTarget::holdout ? "holdout" : "unlabeled-pool";
}

/// Every knob of one training run. Defaults are the two-moons settings.
struct TrainConfig {
  TrainMode mode = TrainMode::mixup_lr;
  MlpSpec net{{2, 64, 64, 2}, Activation::relu};
  double alpha = 0.75;         // Beta(alpha, alpha) for mixing
  double tau = 0.5;            // sharpening temperature
  std::size_t copies = 2;      // P augmented copies for label guessing
  AugmentSpec augment{0.05, 10.0 * 3.14159265358979323846 / 180.0};
  double lambda_u_max = 10.0;
  std::size_t ramp_steps = 1000;
  double zeta = 2.0;           // regularizer weight (ALP in mixup-lr, gradient penalty in mixup-gp)
  AlpConfig alp{};
  double gp_target = 0.0;
  bool alp_on_mixed = false;   // ablation: apply ALP to mixed points instead of the raw batch
  OptimizerHyper optimizer{};
  std::size_t batch_size = 32;
  std::size_t total_steps = 4000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  EvalTarget eval_target = EvalTarget::holdout;
  bool record_wall_time = false;

  /// Regularizer weight actually applied: zero outside the regularized modes.
  double effective_zeta() const noexcept {
    return (mode == TrainMode::mixup_lr || mode == TrainMode::mixup_gp) ? zeta : 0.0;
  }

  void validate() const {
    net.validate();
    if (!(alpha > 0.0)) throw DomainError("alpha must be > 0");
    if (!(tau > 0.0)) throw DomainError("tau must be > 0");
    if (copies < 1) throw DomainError("augment copies P must be >= 1");
    augment.validate();
    if (!(lambda_u_max >= 0.0)) throw DomainError("lambda_u_max must be >= 0");
    if (!(zeta >= 0.0)) throw DomainError("zeta must be >= 0");
    alp.validate();
    if (!(optimizer.lr > 0.0)) throw DomainError("learning rate must be > 0");
    if (batch_size < 1 || total_steps < 1 || eval_every < 1) throw DomainError("batch_size, total_steps, eval_every must be >= 1");
  }
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss_x = 0.0;
  double loss_u = 0.0;
  double loss_alp = 0.0;  // regularizer value (ALP or gradient penalty)
  double total_loss = 0.0;
  double lambda_u = 0.0;
  double error_rate = 0.0;
  std::optional<double> k_hat;
  double wall_ms = 0.0;
};

struct Evaluation {
  double error_rate = 0.0;
  double accuracy = 0.0;
  double mean_ce = 0.0;
};

/// lambda_max * min(1, step / ramp_steps); ramp_steps == 0 means no ramp.
inline double ramp_lambda(std::size_t step, std::size_t ramp_steps, double lambda_u_max) {
  if (ramp_steps == 0) return lambda_u_max;
  return lambda_u_max * std::min(1.0, static_cast<double>(step) / static_cast<double>(ramp_steps));
}

/// Soft-target cross entropy, mean over rows with mask set (all rows if empty).
inline double supervised_loss(const Tensor& pred_logits, const Tensor& y_tilde, const std::vector<char>& mask = {}) {
  return evaluate_head(SoftTargetCrossEntropy{y_tilde, mask}, pred_logits).value;
}

/// ||softmax(pred) - y||^2, mean over rows with mask set (all rows if empty).
inline double unsupervised_loss(const Tensor& pred_logits, const Tensor& y_tilde, const std::vector<char>& mask = {}) {
  return evaluate_head(MeanSquaredProbability{y_tilde, mask}, pred_logits).value;
}

template <BatchModel Model>
Evaluation evaluate(const Model& model, const Tensor& features, const Tensor& labels) {
  if (features.rows() == 0) throw DomainError("evaluate: empty evaluation set");
  if (labels.rows() != features.rows()) throw ShapeError("evaluate: feature/label row mismatch");
  const Tensor logits = model.forward(features);
  const Tensor logp = log_softmax(logits);
  std::size_t wrong = 0;
  double ce = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const std::size_t truth = argmax(labels.row(r));
    if (argmax(logits.row(r)) != truth) ++wrong;
    for (std::size_t j = 0; j < logits.cols(); ++j) ce -= labels(r, j) * logp(r, j);
  }
  const double n = static_cast<double>(logits.rows());
  const double err = static_cast<double>(wrong) / n;
  return {err, 1.0 - err, ce / n};
}

/// Median of the last min(k, n) entries; even counts average the middle two.
inline double median_of_last_k(const std::vector<double>& series, std::size_t k) {
  if (series.empty()) throw DomainError("median_of_last_k: empty series");
  if (k == 0) throw DomainError("median_of_last_k: k must be >= 1");
  const std::size_t take = std::min(k, series.size());
  std::vector<double> tail(series.end() - static_cast<std::ptrdiff_t>(take), series.end());
  std::sort(tail.begin(), tail.end());
  const std::size_t mid = take / 2;
  return take % 2 ? tail[mid] : 0.5 * (tail[mid - 1] + tail[mid]);
}

/// Cycles through 0..n-1 in random order, reshuffling at each epoch boundary.
class EpochSampler {
 public:
  explicit EpochSampler(std::size_t n) : n_(n) {
    if (n == 0) throw DomainError("EpochSampler: empty pool");
  }

  std::vector<std::size_t> next_batch(std::size_t batch, RngState& rng) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        order_ = random_permutation(n_, rng);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Independent random streams used inside a run, one per purpose, so enabling
/// a term (e.g. the ALP) never shifts the draws of another.
struct TrainStreams {
  RngState init, batches, augment, mixing, adversarial;

  explicit TrainStreams(std::uint64_t seed)
      : init(RngState(seed).split(1)),
        batches(RngState(seed).split(2)),
        augment(RngState(seed).split(3)),
        mixing(RngState(seed).split(4)),
        adversarial(RngState(seed).split(5)) {}
};

struct StepBatch {
  Tensor labeled_x;
  Tensor labeled_y;
  Tensor unlabeled_x;  // may be empty in supervised-only mode
};

struct StepLosses {
  double loss_x = 0.0;
  double loss_u = 0.0;
  double loss_alp = 0.0;
  double lambda_u = 0.0;
  double total = 0.0;
};

/// Component gradients of one step. total = grad_x + lambda_u grad_u + zeta grad_reg.
struct StepGradients {
  StepLosses losses;
  ParamVector total;
  ParamVector grad_x;
  ParamVector grad_u;
  ParamVector grad_reg;
};

/// Losses and parameter gradients for one optimizer step.
inline StepGradients compute_step(const Mlp& model, const TrainConfig& cfg, const StepBatch& batch, std::size_t step,
                                  TrainStreams& streams) {
  const std::size_t np = model.params().size();
  StepGradients out{{}, ParamVector(np, 0.0), ParamVector(np, 0.0), ParamVector(np, 0.0), ParamVector(np, 0.0)};
  const double zeta = cfg.effective_zeta();

  if (cfg.mode == TrainMode::supervised_only) {
    auto g = model.loss_and_grads(batch.labeled_x, SoftTargetCrossEntropy{batch.labeled_y, {}});
    out.losses.loss_x = g.loss_value;
    out.grad_x = std::move(g.d_params);
  } else {
    const Tensor guessed =
        sharpen(guess_labels(model, batch.unlabeled_x, cfg.copies, cfg.augment, streams.augment), cfg.tau);
    const MixedBatch mixed =
        mixmatch_mix(batch.labeled_x, batch.labeled_y, batch.unlabeled_x, guessed, cfg.alpha, streams.mixing);
    const auto trace = model.trace(mixed.x_tilde);
    const auto hx = evaluate_head(SoftTargetCrossEntropy{mixed.y_tilde, mixed.mask(Origin::labeled_near)}, trace.logits());
    const auto hu = evaluate_head(MeanSquaredProbability{mixed.y_tilde, mixed.mask(Origin::unlabeled_near)}, trace.logits());
    out.losses.loss_x = hx.value;
    out.losses.loss_u = hu.value;
    out.grad_x = model.backward(trace, hx.d_logits).d_params;
    out.grad_u = model.backward(trace, hu.d_logits).d_params;
    out.losses.lambda_u = ramp_lambda(step, cfg.ramp_steps, cfg.lambda_u_max);

    if (zeta > 0.0) {
      const Tensor reg_points = cfg.alp_on_mixed ? mixed.x_tilde : concat_rows(batch.labeled_x, batch.unlabeled_x);
      AlpTerm reg;
      if (cfg.mode == TrainMode::mixup_lr) {
        AlpConfig alp = cfg.alp;
        alp.keep_flat_rows = true;
        const Tensor r_adv = adv_perturbation(model, reg_points, alp, streams.adversarial);
        reg = alp_loss_and_grads(model, reg_points, r_adv, alp.gamma, alp.d_y, alp.form);
      } else {
        reg = gradient_penalty_and_grads(model, reg_points, cfg.gp_target);
      }
      out.losses.loss_alp = reg.value;
      out.grad_reg = std::move(reg.d_params);
    }
  }

  const double lu = out.losses.lambda_u;
  out.losses.total = out.losses.loss_x + lu * out.losses.loss_u + zeta * out.losses.loss_alp;
  for (std::size_t i = 0; i < np; ++i) out.total[i] = out.grad_x[i] + lu * out.grad_u[i] + zeta * out.grad_reg[i];
  return out;
}

/// Raised when a step produces a non-finite loss; carries the offending record.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, MetricsRecord record) : std::runtime_error(what), record_(record) {}
  const MetricsRecord& record() const noexcept { return record_; }

 private:
  MetricsRecord record_;
};

struct TrainResult {
  Mlp model;
  std::vector<MetricsRecord> metrics;
};

/// Runs the full training loop. Training sees only the SSL view; the labeled
/// evaluation set is used exclusively by evaluate() at logging steps.
inline TrainResult train(const TrainConfig& cfg, const SslTrainingData& data, const LabeledSet& eval_set) {
  cfg.validate();
  if (data.labeled_x.rows() == 0) throw DomainError("train: no labeled examples");
  if (data.labeled_x.cols() != cfg.net.input_dim() || data.labeled_y.cols() != cfg.net.output_dim()) {
    throw ShapeError("train: data does not match network input/output widths");
  }
  const bool needs_unlabeled = cfg.mode != TrainMode::supervised_only;
  if (needs_unlabeled && data.unlabeled_x.rows() == 0) throw DomainError("train: mode needs unlabeled data");

  TrainStreams streams(cfg.seed);
  Mlp model = Mlp::initialized(cfg.net, streams.init);
  OptimizerState opt;
  EpochSampler labeled_sampler(data.labeled_x.rows());
  std::optional<EpochSampler> unlabeled_sampler;
  if (needs_unlabeled) unlabeled_sampler.emplace(data.unlabeled_x.rows());

  std::vector<MetricsRecord> metrics;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    StepBatch batch;
    const auto li = labeled_sampler.next_batch(cfg.batch_size, streams.batches);
    batch.labeled_x = gather_rows(data.labeled_x, li);
    batch.labeled_y = gather_rows(data.labeled_y, li);
    if (needs_unlabeled) batch.unlabeled_x = gather_rows(data.unlabeled_x, unlabeled_sampler->next_batch(cfg.batch_size, streams.batches));

    const StepGradients sg = compute_step(model, cfg, batch, step, streams);
    MetricsRecord rec{step, sg.losses.loss_x, sg.losses.loss_u, sg.losses.loss_alp, sg.losses.total, sg.losses.lambda_u};
    if (!std::isfinite(sg.losses.total)) throw TrainingDiverged("non-finite loss at step " + std::to_string(step), rec);
    sgd_adam_step(model.mutable_params(), sg.total, opt, cfg.optimizer);

    if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
      rec.error_rate = evaluate(model, eval_set.features, eval_set.labels).error_rate;
      if (cfg.record_wall_time) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      metrics.push_back(rec);
    }
  }
  return {std::move(model), std::move(metrics)};
}

inline std::vector<double> error_series(const std::vector<MetricsRecord>& metrics) {
  std::vector<double> s;
  s.reserve(metrics.size());
  for (const auto& m : metrics) s.push_back(m.error_rate);
  return s;
}

inline constexpr std::string_view kMetricsCsvHeader = "step,loss_x,loss_u,loss_alp,total,lambda_u,error_rate,wall_ms";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& metrics) {
  os << kMetricsCsvHeader << '\n';
  for (const auto& m : metrics) {
    os << m.step << ',' << format_float(m.loss_x) << ',' << format_float(m.loss_u) << ',' << format_float(m.loss_alp)
       << ',' << format_float(m.total_loss) << ',' << format_float(m.lambda_u) << ',' << format_float(m.error_rate)
       << ',' << format_float(m.wall_ms) << '\n';
  }
}

}  // namespace mixuplr
