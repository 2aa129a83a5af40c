#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "support.hpp"

using namespace mixuplr;
using namespace mixuplr::testing;

namespace {

struct Fixture {
  Dataset data;
  SslSplit split;
};

Fixture small_moons(std::size_t n = 300) {
  RngState rng(0);
  Fixture f{make_two_moons(n, 0.1, rng), {}};
  RngState s(1);
  f.split = split_ssl(f.data, 6, true, s, 0.2);
  return f;
}

TrainConfig small_config(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.net = MlpSpec{{2, 16, 16, 2}, Activation::relu};
  cfg.total_steps = 200;
  cfg.eval_every = 50;
  cfg.ramp_steps = 100;
  cfg.batch_size = 16;
  return cfg;
}

StepBatch small_batch(RngState& rng) {
  StepBatch b;
  b.labeled_x = gaussian_matrix(8, 2, 1.0, rng);
  std::vector<double> y(16, 0.0);
  for (std::size_t i = 0; i < 8; ++i) y[2 * i + i % 2] = 1.0;
  b.labeled_y = Tensor({8, 2}, y);
  b.unlabeled_x = gaussian_matrix(8, 2, 1.0, rng);
  return b;
}

}  // namespace

TEST(Losses, SupervisedLossCases) {
  const Tensor y = Tensor::from_rows({{1, 0}, {0, 1}});
  EXPECT_LE(supervised_loss(Tensor::from_rows({{50, -50}, {-50, 50}}), y), 1e-9);
  EXPECT_NEAR(supervised_loss(Tensor({2, 3}), Tensor::from_rows({{0.2, 0.3, 0.5}, {1, 0, 0}})), std::log(3.0), 1e-15);
  RngState rng(1);
  const Tensor z = gaussian_matrix(4, 3, 2.0, rng), t = random_simplex_rows(4, 3, rng);
  double expect = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double lse = 0.0;
    for (std::size_t j = 0; j < 3; ++j) lse += std::exp(z(r, j));
    for (std::size_t j = 0; j < 3; ++j) expect -= t(r, j) * (z(r, j) - std::log(lse));
  }
  EXPECT_NEAR(supervised_loss(z, t), expect / 4.0, 1e-13);
  EXPECT_EQ(supervised_loss(z, t, {0, 0, 0, 0}), 0.0);
}

TEST(Losses, UnsupervisedLossCases) {
  RngState rng(2);
  const Tensor z = gaussian_matrix(3, 4, 1.0, rng);
  EXPECT_NEAR(unsupervised_loss(z, softmax(z)), 0.0, 1e-30);
  EXPECT_NEAR(unsupervised_loss(Tensor::from_rows({{50, -50}}), Tensor::from_rows({{0, 1}})), 2.0, 1e-9);
  const Tensor t = random_simplex_rows(3, 4, rng), p = softmax(z);
  double expect = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) expect += (p[i] - t[i]) * (p[i] - t[i]);
  EXPECT_NEAR(unsupervised_loss(z, t), expect / 3.0, 1e-14);
}

TEST(Ramp, LinearSchedule) {
  EXPECT_EQ(ramp_lambda(0, 1000, 10.0), 0.0);
  EXPECT_EQ(ramp_lambda(500, 1000, 10.0), 5.0);
  EXPECT_EQ(ramp_lambda(1000, 1000, 10.0), 10.0);
  EXPECT_EQ(ramp_lambda(5000, 1000, 10.0), 10.0);
  EXPECT_EQ(ramp_lambda(3, 0, 10.0), 10.0);
  double prev = 0.0;
  for (std::size_t t = 0; t < 1500; ++t) {
    const double l = ramp_lambda(t, 1000, 10.0);
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(Median, LastKCases) {
  EXPECT_EQ(median_of_last_k({7.0}, 20), 7.0);
  EXPECT_EQ(median_of_last_k({1, 2, 3, 4}, 4), 2.5);
  EXPECT_EQ(median_of_last_k({100, 1, 2, 3}, 3), 2.0);
  EXPECT_THROW(median_of_last_k({}, 3), DomainError);
  RngState rng(3);
  std::vector<double> s(57);
  for (double& v : s) v = rng.normal();
  std::vector<double> tail(s.end() - 20, s.end());
  std::sort(tail.begin(), tail.end());
  EXPECT_EQ(median_of_last_k(s, 20), 0.5 * (tail[9] + tail[10]));
}

TEST(Evaluate, PerfectConstantAndRandom) {
  const Tensor x = Tensor::from_rows({{1, 0}, {0, 1}, {2, 0}, {0, 3}});
  const Tensor y = Tensor::from_rows({{1, 0}, {0, 1}, {1, 0}, {0, 1}});
  const LinearMap identity{Tensor::from_rows({{1, 0}, {0, 1}}), {}};
  EXPECT_EQ(evaluate(identity, x, y).error_rate, 0.0);
  const LinearMap constant{Tensor({2, 2}), {1.0, 0.0}};
  EXPECT_EQ(evaluate(constant, x, y).error_rate, 0.5);
  RngState rng(4);
  const Mlp net = Mlp::initialized(MlpSpec{{2, 8, 3}, Activation::relu}, rng);
  const Tensor xs = gaussian_matrix(100, 2, 1.0, rng);
  const Tensor ys = random_simplex_rows(100, 3, rng);
  const Tensor z = net.forward(xs);
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < 100; ++r) {
    const auto zr = z.row(r), yr = ys.row(r);
    wrong += std::max_element(zr.begin(), zr.end()) - zr.begin() != std::max_element(yr.begin(), yr.end()) - yr.begin();
  }
  const auto e = evaluate(net, xs, ys);
  EXPECT_EQ(e.error_rate, static_cast<double>(wrong) / 100.0);
  EXPECT_EQ(e.accuracy, 1.0 - e.error_rate);
  EXPECT_THROW(evaluate(net, Tensor({0, 2}), Tensor({0, 3})), DomainError);
}

TEST(ComputeStep, ZeroWeightsReduceToSupervisedTerm) {
  RngState rng(5);
  const Mlp net = Mlp::initialized(MlpSpec{{2, 8, 2}, Activation::tanh}, rng);
  TrainConfig cfg = small_config(TrainMode::mixup_lr);
  cfg.zeta = 0.0;
  TrainStreams streams(0);
  const auto sg = compute_step(net, cfg, small_batch(rng), 0, streams);
  EXPECT_EQ(sg.losses.lambda_u, 0.0);
  EXPECT_EQ(sg.losses.total, sg.losses.loss_x);
  EXPECT_EQ(sg.total, sg.grad_x);
}

TEST(ComputeStep, ZetaEntersLinearly) {
  RngState rng(6);
  const Mlp net = Mlp::initialized(MlpSpec{{2, 8, 2}, Activation::tanh}, rng);
  const StepBatch batch = small_batch(rng);
  std::vector<ParamVector> totals;
  ParamVector reg;
  for (double zeta : {0.0, 1.0, 2.0}) {
    TrainConfig cfg = small_config(TrainMode::mixup_lr);
    cfg.zeta = zeta;
    TrainStreams streams(9);
    const auto sg = compute_step(net, cfg, batch, 40, streams);
    totals.push_back(sg.total);
    if (zeta == 2.0) reg = sg.grad_reg;
  }
  for (std::size_t i = 0; i < reg.size(); ++i) {
    EXPECT_NEAR(totals[2][i] - totals[0][i], 2.0 * reg[i], 1e-10);
    EXPECT_NEAR(totals[2][i] - totals[0][i], 2.0 * (totals[1][i] - totals[0][i]), 1e-10);
  }
}

TEST(ComputeStep, CombinedGradientMatchesFiniteDifferences) {
  RngState rng(7);
  const Mlp net = Mlp::initialized(MlpSpec{{2, 6, 2}, Activation::tanh}, rng);
  const StepBatch batch = small_batch(rng);
  // Fixed mixed batch and perturbation, as within one optimizer step.
  const Tensor guessed = sharpen(guess_labels(net, batch.unlabeled_x, 2, AugmentSpec{0.05, 0.1}, rng), 0.5);
  const MixedBatch mixed = mixmatch_mix(batch.labeled_x, batch.labeled_y, batch.unlabeled_x, guessed, 0.75, rng);
  const Tensor raw = concat_rows(batch.labeled_x, batch.unlabeled_x);
  const Tensor r_adv = adv_perturbation(net, raw, AlpConfig{}, rng);
  const double lu = 3.0, zeta = 2.0;
  const SoftTargetCrossEntropy hx{mixed.y_tilde, mixed.mask(Origin::labeled_near)};
  const MeanSquaredProbability hu{mixed.y_tilde, mixed.mask(Origin::unlabeled_near)};
  const auto gx = net.loss_and_grads(mixed.x_tilde, hx);
  const auto gu = net.loss_and_grads(mixed.x_tilde, hu);
  const auto ga = alp_loss_and_grads(net, raw, r_adv, 0.0);
  ParamVector analytic(gx.d_params.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = gx.d_params[i] + lu * gu.d_params[i] + zeta * ga.d_params[i];
  Mlp probe = net;
  const auto total = [&] {
    const Tensor z = probe.forward(mixed.x_tilde);
    return evaluate_head(hx, z).value + lu * evaluate_head(hu, z).value + zeta * alp_loss(probe, raw, r_adv, 0.0);
  };
  EXPECT_LE(max_relative_error(analytic, central_differences(probe.mutable_params(), total, kFdStep), kFdFloor),
            kFdTolerance);
}

TEST(Train, LossDecompositionAtEveryLoggedStep) {
  const auto f = small_moons();
  TrainConfig cfg = small_config(TrainMode::mixup_lr);
  const auto res = train(cfg, training_view(f.data, f.split), labeled_subset(f.data, f.split.holdout_idx));
  ASSERT_EQ(res.metrics.size(), 4u);
  std::size_t prev = 0;
  for (const auto& m : res.metrics) {
    EXPECT_GT(m.step, prev);
    prev = m.step;
    EXPECT_NEAR(m.total_loss - (m.loss_x + m.lambda_u * m.loss_u + cfg.zeta * m.loss_alp), 0.0, 1e-12);
    EXPECT_TRUE(std::isfinite(m.error_rate));
  }
}

TEST(Train, DeterministicAndModeEquivalentAtZeroZeta) {
  const auto f = small_moons();
  const auto view = training_view(f.data, f.split);
  const auto eval = labeled_subset(f.data, f.split.holdout_idx);
  TrainConfig only = small_config(TrainMode::mixup_only);
  TrainConfig lr = small_config(TrainMode::mixup_lr);
  lr.zeta = 0.0;
  std::ostringstream a, b, c;
  write_metrics_csv(a, train(only, view, eval).metrics);
  write_metrics_csv(b, train(only, view, eval).metrics);
  write_metrics_csv(c, train(lr, view, eval).metrics);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str(), c.str());
}

TEST(Train, GradientPenaltyModeRuns) {
  const auto f = small_moons();
  TrainConfig cfg = small_config(TrainMode::mixup_gp);
  cfg.total_steps = 50;
  const auto res = train(cfg, training_view(f.data, f.split), labeled_subset(f.data, f.split.holdout_idx));
  EXPECT_GT(res.metrics.back().loss_alp, 0.0);
}

TEST(Train, SupervisedBlobsFitTrainingSet) {
  RngState rng(8);
  const Dataset d = make_blobs(600, make_blob_centers(3, 2, 4.0, rng), 0.5, rng);
  RngState s(2);
  const auto split = split_ssl(d, d.size(), false, s, 0.0);
  TrainConfig cfg = small_config(TrainMode::supervised_only);
  cfg.net = MlpSpec{{2, 64, 64, 3}, Activation::relu};
  cfg.total_steps = 2000;
  cfg.eval_every = 2000;
  cfg.batch_size = 32;
  const auto res = train(cfg, training_view(d, split), labeled_subset(d, split.labeled_idx));
  EXPECT_GE(1.0 - res.metrics.back().error_rate, 0.99);
}

TEST(Train, ValidatesInputs) {
  const auto f = small_moons();
  const auto eval = labeled_subset(f.data, f.split.holdout_idx);
  TrainConfig bad = small_config(TrainMode::mixup_lr);
  bad.tau = 0.0;
  EXPECT_THROW(train(bad, training_view(f.data, f.split), eval), DomainError);
  TrainConfig wide = small_config(TrainMode::mixup_lr);
  wide.net = MlpSpec{{3, 8, 2}, Activation::relu};
  EXPECT_THROW(train(wide, training_view(f.data, f.split), eval), ShapeError);
  SslTrainingData no_unlabeled = training_view(f.data, f.split);
  no_unlabeled.unlabeled_x = Tensor({0, 2});
  EXPECT_THROW(train(small_config(TrainMode::mixup_only), no_unlabeled, eval), DomainError);
}

TEST(Train, MetricsCsvFormat) {
  std::vector<MetricsRecord> m{{1, 0.5, 0.25, 0.0, 0.5, 0.0, 0.125, {}, 0.0}};
  std::ostringstream os;
  write_metrics_csv(os, m);
  EXPECT_EQ(os.str(), std::string(kMetricsCsvHeader) + "\n1,0.5,0.25,0,0.5,0,0.125,0\n");
}
