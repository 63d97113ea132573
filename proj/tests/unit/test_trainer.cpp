#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "almd/rng.hpp"
#include "almd/trainer.hpp"

using namespace almd;

namespace {

constexpr double kDimerK = 200.0, kDimerR0 = 0.4;

// Frames of a dimer bound by 0.5 k (r - r0)^2, with exact forces.
std::vector<CGFrame> dimer_frames(int n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(kDimerR0 - 0.1, kDimerR0 + 0.1);
  std::vector<CGFrame> out;
  for (int t = 0; t < n; ++t) {
    const Eigen::RowVector3d dir = Eigen::RowVector3d(g(rng), g(rng), g(rng)).normalized();
    const double r = u(rng);
    Points3d R(2, 3);
    R.row(0) = Eigen::RowVector3d(g(rng), g(rng), g(rng)) * 0.1;
    R.row(1) = R.row(0) + r * dir;
    Points3d F(2, 3);
    F.row(1) = -kDimerK * (r - kDimerR0) * dir;
    F.row(0) = -F.row(1);
    out.push_back({0.1 * t, R, F});
  }
  return out;
}

PotentialParams dimer_net(std::uint64_t seed) {
  NetHyper h;
  h.n_types = 2;
  h.n_blocks = 1;
  h.width = 16;
  h.n_rbf = 16;
  h.r_cut = 1.0;
  return init_potential(h, seed);
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Split, TenFramesAtTwentyPercent) {
  const DataSplit s = split_dataset(10, 0.2, 5);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 2u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(split_dataset(10, 0.2, 5).val, s.val);
  EXPECT_TRUE(split_dataset(3, 0.0, 1).val.empty());
}

TEST(Train, RejectsDegenerateInputs) {
  const PotentialParams p = dimer_net(1);
  const auto t = default_types(2);
  EXPECT_THROW(train(p, std::vector<CGFrame>{}, t, TrainConfig{}), Error);
  TrainConfig c;
  c.val_fraction = 0.6;
  c.epochs = 1;
  // floor(0.6 * 1) = 0, so a single frame still trains.
  EXPECT_EQ(train(p, dimer_frames(1, 1), t, c).history.size(), 2u);
  std::vector<CGFrame> unlabeled = dimer_frames(2, 1);
  unlabeled[1].forces.reset();
  EXPECT_THROW(train(p, unlabeled, t, c), Error);
}

TEST(Adam, MonotoneOnQuadratic) {
  // f(x) = 0.5 x^T A x with an ill-conditioned diagonal A.
  Eigen::VectorXd a(4);
  a << 1.0, 10.0, 0.1, 100.0;
  Eigen::VectorXd x(4);
  x << 1.0, -2.0, 3.0, 0.5;
  TrainConfig c;
  c.learning_rate = 1e-3;
  AdamOptimizer adam(4, c);
  auto f = [&] { return 0.5 * x.dot(a.cwiseProduct(x)); };
  double prev = f();
  for (int s = 0; s < 10; ++s) {
    adam.step(x, a.cwiseProduct(x));
    EXPECT_LT(f(), prev) << "step " << s;
    prev = f();
  }
  EXPECT_EQ(adam.steps(), 10);
}

TEST(Train, MonotoneFullBatchSmallStep) {
  const auto frames = dimer_frames(16, 2);
  TrainConfig c;
  c.learning_rate = 1e-4;
  c.batch_size = 16;
  c.epochs = 10;
  c.val_fraction = 0.0;
  const TrainResult r = train(dimer_net(2), frames, default_types(2), c);
  ASSERT_EQ(r.history.size(), 11u);
  for (std::size_t e = 1; e < r.history.size(); ++e)
    EXPECT_LT(r.history[e].train_loss, r.history[e - 1].train_loss) << "epoch " << e;
  EXPECT_TRUE(std::isnan(r.history.back().val_loss));
}

TEST(Train, HarmonicDimerConverges) {
  const auto frames = dimer_frames(64, 3);
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 8;
  c.epochs = 200;
  c.val_fraction = 0.2;
  c.rng_seed = 3;
  const TrainResult r = train(dimer_net(3), frames, default_types(2), c);
  ASSERT_EQ(r.history.size(), 201u);
  const double initial = r.history.front().train_loss;
  double best_train = initial;
  for (const auto& e : r.history) best_train = std::min(best_train, e.train_loss);
  EXPECT_LE(r.history.back().train_loss, 0.1 * initial)
      << "initial " << initial << " final " << r.history.back().train_loss;
  // Returned parameters are the best validation epoch.
  const DataSplit s = split_dataset(frames.size(), c.val_fraction, c.rng_seed);
  std::vector<CGFrame> val;
  for (auto i : s.val) val.push_back(frames[i]);
  EXPECT_DOUBLE_EQ(fm_loss(r.params, val, default_types(2)), r.history[static_cast<std::size_t>(r.best_epoch)].val_loss);
  for (const auto& e : r.history) EXPECT_GE(e.val_loss, r.history[static_cast<std::size_t>(r.best_epoch)].val_loss);
}

TEST(Train, DeterministicHistory) {
  const auto frames = dimer_frames(20, 4);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 3;
  c.rng_seed = 11;
  c.weight_decay = 1e-3;
  const TrainResult a = train(dimer_net(4), frames, default_types(2), c);
  const TrainResult b = train(dimer_net(4), frames, default_types(2), c);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
  }
  EXPECT_EQ(a.params.theta, b.params.theta);
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  const auto frames = dimer_frames(8, 5);
  TrainConfig c;
  c.learning_rate = 1e6;
  c.epochs = 50;
  c.batch_size = 2;
  c.val_fraction = 0.0;
  PotentialParams p = dimer_net(5);
  p.hyper.energy_scale = 1e200;
  try {
    train(p, frames, default_types(2), c);
    FAIL() << "expected divergence";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}
