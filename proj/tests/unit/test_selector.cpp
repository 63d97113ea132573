#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "almd/rng.hpp"
#include "almd/selector.hpp"
#include "oracles.hpp"

using namespace almd;

namespace {

Points3d random_cloud(int M, Rng& rng, double spread = 0.5) {
  std::normal_distribution<double> g(0.0, spread);
  Points3d R(M, 3);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < 3; ++k) R(i, k) = g(rng);
  return R;
}

double rms_radius(const Points3d& P) {
  return std::sqrt((P.rowwise() - P.colwise().mean()).squaredNorm() / static_cast<double>(P.rows()));
}

// Scaling about the centroid by s gives aligned RMSD |1 - s| * rms radius
// (the cross-covariance is symmetric PSD, so the best rotation is identity).
Points3d scaled_to_rmsd(const Points3d& P, double d) {
  const Eigen::RowVector3d c = P.colwise().mean();
  const double s = 1.0 + d / rms_radius(P);
  return (s * (P.rowwise() - c)).rowwise() + c;
}

Points3d rigid(const Points3d& P, Rng& rng) {
  const Eigen::Matrix3d Q = oracle_test::random_rotation(rng);
  std::normal_distribution<double> g(0.0, 3.0);
  return (P * Q.transpose()).rowwise() + Eigen::RowVector3d(g(rng), g(rng), g(rng));
}

}  // namespace

TEST(Subsample, DeterministicUniqueSorted) {
  const auto a = subsample_indices(1000, 50, 3);
  EXPECT_EQ(a, subsample_indices(1000, 50, 3));
  EXPECT_NE(a, subsample_indices(1000, 50, 4));
  EXPECT_EQ(a.size(), 50u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 50u);
  EXPECT_EQ(subsample_indices(10, 0, 1).size(), 10u);
  EXPECT_EQ(subsample_indices(10, 20, 1).size(), 10u);
}

TEST(MinRmsd, MemberAndRigidCopy) {
  Rng rng = make_rng(1, 0);
  std::vector<CGFrame> train;
  for (int i = 0; i < 5; ++i) train.push_back({0.0, random_cloud(8, rng), std::nullopt});
  EXPECT_LE(min_rmsd_to_set(train[3].coords, train), 1e-10);
  const std::vector<CGFrame> one{train[0]};
  EXPECT_LE(min_rmsd_to_set(rigid(train[0].coords, rng), one), 1e-10);
  EXPECT_THROW(min_rmsd_to_set(train[0].coords, std::vector<CGFrame>{}), Error);
  EXPECT_THROW(min_rmsd_to_set(Points3d::Zero(3, 3), one), Error);
}

TEST(MinRmsd, MatchesExhaustiveQuaternionOracle) {
  Rng rng = make_rng(2, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CGFrame> train;
    for (int i = 0; i < 2; ++i) train.push_back({0.0, random_cloud(6, rng), std::nullopt});
    const Points3d q = random_cloud(6, rng);
    const double expect = std::min(oracle_test::quaternion_rmsd(q, train[0].coords),
                                   oracle_test::quaternion_rmsd(q, train[1].coords));
    EXPECT_NEAR(min_rmsd_to_set(q, train), expect, 1e-10);
  }
  // Equidistant construction: both training frames are scalings by +-0.2 nm.
  const Points3d P = random_cloud(6, rng);
  const std::vector<CGFrame> train{{0.0, scaled_to_rmsd(P, 0.2), std::nullopt},
                                   {0.0, scaled_to_rmsd(P, -0.3), std::nullopt}};
  EXPECT_NEAR(min_rmsd_to_set(P, train), 0.2, 1e-10);
}

TEST(Select, HandExampleCutoffExcludesLargest) {
  Rng rng = make_rng(3, 0);
  const Points3d P = random_cloud(6, rng);
  const std::vector<CGFrame> train{{0.0, P, std::nullopt}};
  std::vector<CGFrame> traj;
  const double d[] = {0.1, 0.5, 0.3};
  for (int i = 0; i < 3; ++i) traj.push_back({static_cast<double>(i), scaled_to_rmsd(P, d[i]), std::nullopt});
  SelectionConfig c;
  c.k = 1;
  c.rmsd_cutoff = 0.4;
  const SelectionReport r = select_frames(traj, {}, train, c);
  ASSERT_EQ(r.selected.size(), 1u);
  EXPECT_EQ(r.selected[0], 2u);
  EXPECT_NEAR(r.selected_rmsd[0], 0.3, 1e-10);
  EXPECT_EQ(r.n_cutoff_excluded, 1u);
  EXPECT_EQ(r.n_candidates, 2u);
  std::size_t total = 0;
  for (auto n : r.histogram.counts) total += n;
  EXPECT_EQ(total, 3u);

  c.k = 10;
  const SelectionReport all = select_frames(traj, {}, train, c);
  EXPECT_EQ(all.selected, (std::vector<std::size_t>{2, 0}));

  c.rmsd_floor = 0.2;
  EXPECT_EQ(select_frames(traj, {}, train, c).selected, (std::vector<std::size_t>{2}));
}

TEST(Select, TiesGoToEarlierTime) {
  Rng rng = make_rng(4, 0);
  const Points3d P = random_cloud(5, rng);
  const std::vector<CGFrame> train{{0.0, P, std::nullopt}};
  const Points3d Q = scaled_to_rmsd(P, 0.25);
  const std::vector<CGFrame> traj{{5.0, Q, std::nullopt}, {1.0, Q, std::nullopt}, {3.0, Q, std::nullopt}};
  SelectionConfig c;
  c.k = 2;
  EXPECT_EQ(select_frames(traj, {}, train, c).selected, (std::vector<std::size_t>{1, 2}));
}

TEST(Select, AllAnomalousIsNothingToSelect) {
  Rng rng = make_rng(5, 0);
  const std::vector<CGFrame> train{{0.0, random_cloud(4, rng), std::nullopt}};
  const std::vector<CGFrame> traj{{0.0, random_cloud(4, rng), std::nullopt}, {1.0, random_cloud(4, rng), std::nullopt}};
  const SelectionReport r = select_frames(traj, {true, true}, train, SelectionConfig{});
  EXPECT_TRUE(r.nothing_to_select);
  EXPECT_TRUE(r.selected.empty());
  EXPECT_EQ(r.n_anomalous, 2u);
  EXPECT_THROW(select_frames(std::vector<CGFrame>{}, {}, train, SelectionConfig{}), Error);
  EXPECT_THROW(select_frames(traj, {true}, train, SelectionConfig{}), Error);
}

TEST(Select, ExhaustiveTopKProperty) {
  Rng rng = make_rng(6, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const int M = 6;
    std::vector<CGFrame> train;
    for (int i = 0; i < 40; ++i) train.push_back({0.0, random_cloud(M, rng), std::nullopt});
    std::vector<CGFrame> traj;
    std::vector<bool> flags;
    std::bernoulli_distribution flag(0.1);
    const int T = 200 + 200 * trial;
    for (int t = 0; t < T; ++t) {
      traj.push_back({0.1 * t, random_cloud(M, rng, 0.3 + 0.001 * t), std::nullopt});
      flags.push_back(flag(rng));
    }
    SelectionConfig c;
    c.k = 7 + trial;
    c.rmsd_cutoff = 0.55;
    c.training_subsample = 0;
    const SelectionReport r = select_frames(traj, flags, train, c);
    // Recompute with the independent oracle.
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t t = 0; t < traj.size(); ++t) {
      double d = 1e300;
      for (const auto& f : train) d = std::min(d, oracle_test::quaternion_rmsd(traj[t].coords, f.coords));
      EXPECT_NEAR(r.min_rmsd[t], d, 1e-9);
      if (!flags[t] && d <= c.rmsd_cutoff) cand.emplace_back(d, t);
    }
    std::sort(cand.begin(), cand.end(), [](auto a, auto b) { return a.first > b.first; });
    ASSERT_EQ(r.selected.size(), std::min<std::size_t>(cand.size(), static_cast<std::size_t>(c.k)));
    for (std::size_t i = 0; i < r.selected.size(); ++i) EXPECT_EQ(r.selected[i], cand[i].second);
    std::set<std::size_t> chosen(r.selected.begin(), r.selected.end());
    for (std::size_t s : r.selected) {
      EXPECT_FALSE(flags[s]);
      EXPECT_LE(r.min_rmsd[s], c.rmsd_cutoff);
      for (const auto& [d, t] : cand)
        if (!chosen.count(t)) EXPECT_GE(r.min_rmsd[s], d);
    }
    // Uniform rigid motion of the trajectory does not change the selection.
    std::vector<CGFrame> moved = traj;
    const Eigen::Matrix3d Q = oracle_test::random_rotation(rng);
    for (auto& f : moved) f.coords = (f.coords * Q.transpose()).rowwise() + Eigen::RowVector3d(1, -2, 3);
    EXPECT_EQ(select_frames(moved, flags, train, c).selected, r.selected);
  }
}

TEST(Select, SubsampleIsDeterministic) {
  Rng rng = make_rng(7, 0);
  std::vector<CGFrame> train, traj;
  for (int i = 0; i < 100; ++i) train.push_back({0.0, random_cloud(5, rng), std::nullopt});
  for (int i = 0; i < 30; ++i) traj.push_back({1.0 * i, random_cloud(5, rng), std::nullopt});
  SelectionConfig c;
  c.training_subsample = 10;
  c.rng_seed = 4;
  const auto a = select_frames(traj, {}, train, c);
  EXPECT_EQ(a.min_rmsd, select_frames(traj, {}, train, c).min_rmsd);
  const auto idx = subsample_indices(100, 10, 4);
  EXPECT_EQ(a.min_rmsd[0], min_rmsd_to_set(traj[0].coords, train, idx));
}

TEST(RmsdHistogram, ReferenceAndRigidMotions) {
  Rng rng = make_rng(8, 0);
  const Points3d ref = random_cloud(7, rng);
  const std::vector<CGFrame> self{{0.0, ref, std::nullopt}};
  const Histogram h = rmsd_histogram_vs_reference(self, ref, 10, 0.0, 1.0);
  EXPECT_EQ(h.counts[0], 1u);
  EXPECT_EQ(h.in_range(), 1u);
  std::vector<CGFrame> moved;
  for (int i = 0; i < 50; ++i) moved.push_back({0.0, rigid(ref, rng), std::nullopt});
  EXPECT_EQ(rmsd_histogram_vs_reference(moved, ref, 10, 0.0, 1.0).counts[0], 50u);
}

TEST(RmsdHistogram, TwoClustersAreBimodal) {
  Rng rng = make_rng(9, 0);
  const Points3d ref = random_cloud(7, rng);
  std::normal_distribution<double> jitter(0.0, 0.01);
  std::vector<CGFrame> traj;
  for (int i = 0; i < 200; ++i) {
    const double d = (i % 2 ? 0.6 : 0.2) + jitter(rng);
    traj.push_back({0.0, rigid(scaled_to_rmsd(ref, d), rng), std::nullopt});
  }
  const Histogram h = rmsd_histogram_vs_reference(traj, ref, 20, 0.0, 1.0);  // 0.05 bins
  auto peak = [&](std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(std::max_element(h.counts.begin() + static_cast<long>(lo),
                                                     h.counts.begin() + static_cast<long>(hi)) - h.counts.begin());
  };
  const std::size_t p1 = peak(0, 8), p2 = peak(8, 20);
  EXPECT_NEAR(0.5 * (h.edges[p1] + h.edges[p1 + 1]), 0.2, 0.05);
  EXPECT_NEAR(0.5 * (h.edges[p2] + h.edges[p2 + 1]), 0.6, 0.05);
  EXPECT_EQ(h.counts[8], 0u);  // 0.40-0.45 gap between the modes
  EXPECT_EQ(h.in_range(), 200u);
}
