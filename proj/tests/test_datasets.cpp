#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace mixuplr;

namespace {

std::size_t count_class(const Dataset& d, std::size_t c) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) n += d.label_of(i) == c;
  return n;
}

double train_accuracy_supervised(const Dataset& data, std::size_t steps) {
  RngState split_rng(1);
  const SslSplit split = split_ssl(data, data.size(), false, split_rng, 0.0);
  TrainConfig cfg;
  cfg.mode = TrainMode::supervised_only;
  cfg.net = MlpSpec{{2, 64, 64, data.num_classes()}, Activation::relu};
  cfg.batch_size = 64;
  cfg.total_steps = steps;
  cfg.eval_every = steps;
  cfg.optimizer.lr = 5e-3;
  const auto res = train(cfg, training_view(data, split), labeled_subset(data, split.labeled_idx));
  return evaluate(res.model, data.features, data.labels).accuracy;
}

}  // namespace

TEST(TwoMoons, NoiselessPointsLieOnArcs) {
  RngState rng(0);
  const Dataset d = make_two_moons(4, 0.0, rng);
  ASSERT_EQ(d.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = d.features(i, 0), y = d.features(i, 1);
    if (d.label_of(i) == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-15);
      EXPECT_GE(y, -1e-15);
    } else {
      EXPECT_NEAR((1 - x) * (1 - x) + (0.5 - y) * (0.5 - y), 1.0, 1e-15);
      EXPECT_LE(y, 0.5 + 1e-15);
    }
  }
  // Endpoints of the upper arc at angles 0 and pi.
  EXPECT_NEAR(d.features(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(d.features(1, 0), -1.0, 1e-15);
}

TEST(TwoMoons, ClassCountsAndDeterminism) {
  RngState a(5), b(5);
  const Dataset d = make_two_moons(11, 0.1, a);
  EXPECT_EQ(count_class(d, 0), 6u);
  EXPECT_EQ(count_class(d, 1), 5u);
  EXPECT_EQ(d.features, make_two_moons(11, 0.1, b).features);
  EXPECT_TRUE(d.features.all_finite());
  EXPECT_THROW(make_two_moons(1, 0.1, a), DomainError);
}

TEST(TwoMoons, SupervisedSeparable) {
  RngState rng(0);
  const Dataset d = make_two_moons(2000, 0.1, rng);
  EXPECT_GE(train_accuracy_supervised(d, 2000), 0.99);
}

TEST(Circles, GeometryCountsAndErrors) {
  RngState rng(1);
  const Dataset d = make_circles(9, 0.0, 0.4, rng);
  EXPECT_EQ(count_class(d, 0), 5u);
  EXPECT_EQ(count_class(d, 1), 4u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = std::hypot(d.features(i, 0), d.features(i, 1));
    EXPECT_NEAR(r, d.label_of(i) == 0 ? 1.0 : 0.4, 1e-15);
  }
  EXPECT_THROW(make_circles(10, 0.0, 1.0, rng), DomainError);
  EXPECT_THROW(make_circles(10, 0.0, 0.0, rng), DomainError);
}

TEST(Circles, SupervisedSeparable) {
  RngState rng(2);
  const Dataset d = make_circles(1000, 0.05, 0.5, rng);
  EXPECT_GE(train_accuracy_supervised(d, 2000), 0.99);
}

TEST(Blobs, GeometryAndCounts) {
  const Tensor centers = Tensor::from_rows({{0, 0}, {5, 5}, {-5, 5}});
  RngState rng(3);
  const Dataset d = make_blobs(10, centers, 0.0, rng);
  EXPECT_EQ(count_class(d, 0), 4u);
  EXPECT_EQ(count_class(d, 1), 3u);
  EXPECT_EQ(count_class(d, 2), 3u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.features(i, 0), centers(d.label_of(i), 0));
    EXPECT_EQ(d.features(i, 1), centers(d.label_of(i), 1));
  }
}

TEST(SplitSsl, PartitionsWithoutLeakage) {
  RngState rng(4);
  const Dataset d = make_two_moons(200, 0.1, rng);
  RngState s(7);
  const SslSplit split = split_ssl(d, 6, true, s, 0.2);
  EXPECT_EQ(split.holdout_idx.size(), 40u);
  EXPECT_EQ(split.labeled_idx.size(), 6u);
  EXPECT_EQ(split.unlabeled_idx.size(), 154u);
  std::set<std::size_t> all;
  for (const auto* v : {&split.labeled_idx, &split.unlabeled_idx, &split.holdout_idx}) all.insert(v->begin(), v->end());
  EXPECT_EQ(all.size(), 200u);
  std::size_t per_class[2] = {0, 0};
  for (std::size_t i : split.labeled_idx) ++per_class[d.label_of(i)];
  EXPECT_EQ(per_class[0], 3u);
  EXPECT_EQ(per_class[1], 3u);
}

TEST(SplitSsl, ReproducibleAndEdgeCases) {
  RngState rng(5);
  const Dataset d = make_two_moons(50, 0.1, rng);
  RngState a(9), b(9);
  const auto s1 = split_ssl(d, 4, true, a, 0.1), s2 = split_ssl(d, 4, true, b, 0.1);
  EXPECT_EQ(s1.labeled_idx, s2.labeled_idx);
  EXPECT_EQ(s1.unlabeled_idx, s2.unlabeled_idx);
  EXPECT_EQ(s1.holdout_idx, s2.holdout_idx);

  RngState c(1);
  const auto full = split_ssl(d, 50, false, c, 0.0);
  EXPECT_EQ(full.labeled_idx.size(), 50u);
  EXPECT_TRUE(full.unlabeled_idx.empty());
  EXPECT_TRUE(full.holdout_idx.empty());

  RngState e(2);
  EXPECT_THROW(split_ssl(d, 1, true, e), DomainError);
  EXPECT_THROW(split_ssl(d, 40, false, e, 0.5), DomainError);
}

TEST(SplitSsl, TrainingViewCarriesNoUnlabeledLabels) {
  RngState rng(6);
  const Dataset d = make_two_moons(30, 0.1, rng);
  RngState s(3);
  const auto split = split_ssl(d, 4, true, s, 0.2);
  const SslTrainingData view = training_view(d, split);
  EXPECT_EQ(view.labeled_x.rows(), 4u);
  EXPECT_EQ(view.labeled_y.rows(), 4u);
  EXPECT_EQ(view.unlabeled_x.rows(), split.unlabeled_idx.size());
  EXPECT_EQ(view.unlabeled_x.cols(), 2u);
}

TEST(Augment, ZeroSpecIsIdentity) {
  RngState rng(7);
  const Tensor x = mixuplr::testing::gaussian_matrix(5, 2, 1.0, rng);
  EXPECT_EQ(augment(x, AugmentSpec{0.0, 0.0}, rng), x);
}

TEST(Augment, RotationPreservesDistances) {
  RngState rng(8);
  const Tensor x = mixuplr::testing::gaussian_matrix(6, 2, 1.0, rng);
  const Tensor y = augment(x, AugmentSpec{0.0, std::numbers::pi / 2}, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(l2_distance(x.row(i), x.row(j)), l2_distance(y.row(i), y.row(j)), 1e-10);
    }
  }
  EXPECT_THROW(augment(Tensor({2, 3}), AugmentSpec{0.0, 0.1}, rng), ShapeError);
  EXPECT_THROW(augment(x, AugmentSpec{-1.0, 0.0}, rng), DomainError);
}

TEST(Augment, JitterDeviationMatchesSigma) {
  RngState rng(9);
  const Tensor x({50000, 2});
  const Tensor y = augment(x, AugmentSpec{0.05, 0.0}, rng);
  double ss = 0.0;
  for (double v : y.values()) ss += v * v;
  const double sd = std::sqrt(ss / 1e5);
  // The sample sd of 1e5 normals has relative standard error 1/sqrt(2n).
  EXPECT_NEAR(sd, 0.05, 3.0 * 0.05 / std::sqrt(2e5));
}

TEST(DatasetIo, CsvAndIndicesRoundTrip) {
  RngState rng(10);
  const Dataset d = make_two_moons(7, 0.1, rng);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const Dataset back = read_dataset_csv(ss);
  ASSERT_EQ(back.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(back.label_of(i), d.label_of(i));
    EXPECT_NEAR(back.features(i, 0), d.features(i, 0), 1e-5);
  }
  std::stringstream is;
  write_indices(is, {3, 1, 4});
  EXPECT_EQ(read_indices(is), (std::vector<std::size_t>{3, 1, 4}));
  std::stringstream bad("a,b\n1,2\n");
  EXPECT_THROW(read_dataset_csv(bad), ConfigError);
}
