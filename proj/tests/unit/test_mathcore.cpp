#include "almd/mathcore.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "oracles.hpp"

namespace almd {
namespace {

using oracle_test::random_rotation;
constexpr double kPi = std::numbers::pi;

Points3d random_points(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Points3d P(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) P(i, k) = u(rng);
  return P;
}

Points3d rigid(const Points3d& P, const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  Points3d out = P * R.transpose();
  out.rowwise() += t.transpose();
  return out;
}

TEST(Kabsch, IdenticalSetsGiveIdentity) {
  std::mt19937_64 rng(1);
  const Points3d P = random_points(rng, 7);
  const Superposition s = kabsch_align(P, P);
  EXPECT_NEAR(s.rmsd, 0.0, 1e-12);
  EXPECT_LT((s.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kabsch, RecoversRigidMotion) {
  std::mt19937_64 rng(2);
  const Points3d P = random_points(rng, 9);
  const Eigen::Matrix3d Rz = Eigen::AngleAxisd(kPi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Points3d Q = rigid(P, Rz, Eigen::Vector3d(1, 2, 3));
  const Superposition s = kabsch_align(P, Q);
  EXPECT_LE(s.rmsd, 1e-10);
  EXPECT_NEAR(s.rotation.determinant(), 1.0, 1e-12);
  EXPECT_LT((rigid(P, s.rotation, s.translation) - Q).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Kabsch, StretchedPairMatchesGridSearch) {
  Points3d P(2, 3), Q(2, 3);
  P << 0, 0, 0, 2, 0, 0;
  Q << 0, 0, 0, 4, 0, 0;
  // Brute force over in-plane rotations and translations along x.
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 360; ++a) {
    const Eigen::Matrix3d R =
        Eigen::AngleAxisd(a * kPi / 180.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    for (int ti = -400; ti <= 400; ++ti) {
      const Points3d M = rigid(P, R, Eigen::Vector3d(ti * 0.01, 0, 0));
      best = std::min(best, std::sqrt((M - Q).squaredNorm() / 2.0));
    }
  }
  EXPECT_NEAR(best, 1.0, 1e-9);
  EXPECT_NEAR(kabsch_align(P, Q).rmsd, 1.0, 1e-12);
}

TEST(Kabsch, CoincidentPointsReturnIdentity) {
  Points3d P = Points3d::Ones(4, 3);
  Points3d Q = Points3d::Ones(4, 3) * 2.0;
  const Superposition s = kabsch_align(P, Q);
  EXPECT_EQ(s.rotation, Eigen::Matrix3d::Identity());
  EXPECT_NEAR(s.rmsd, 0.0, 1e-15);
}

TEST(Kabsch, MirrorImageStillProperRotation) {
  std::mt19937_64 rng(3);
  const Points3d P = random_points(rng, 6);
  Points3d Q = P;
  Q.col(2) *= -1.0;
  const Superposition s = kabsch_align(P, Q);
  EXPECT_NEAR(s.rotation.determinant(), 1.0, 1e-12);
  EXPECT_GT(s.rmsd, 0.0);
}

TEST(Kabsch, LengthMismatchThrows) {
  EXPECT_THROW(kabsch_align(Points3d::Zero(3, 3), Points3d::Zero(4, 3)), Error);
}

TEST(Kabsch, SymmetricAndInvariantProperty) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 12;
    const Points3d P = random_points(rng, n);
    const Points3d Q = random_points(rng, n);
    const double pq = rmsd(P, Q);
    EXPECT_NEAR(pq, rmsd(Q, P), 1e-10);
    const Points3d Pm = rigid(P, random_rotation(rng), Eigen::Vector3d::Random() * 5.0);
    const Points3d Qm = rigid(Q, random_rotation(rng), Eigen::Vector3d::Random() * 5.0);
    EXPECT_NEAR(pq, rmsd(Pm, Qm), 1e-10);
    EXPECT_GE(pq, 0.0);
    EXPECT_LE(pq, rmsd(P, Q, RmsdMode::unaligned) + 1e-12);
  }
}

TEST(Wasserstein, Examples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(wasserstein1(a, a), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein1(std::vector<double>{0, 0}, std::vector<double>{1, 1}), 1.0);
  const std::vector<double> x{0, 1}, y{2, 5};
  EXPECT_DOUBLE_EQ(oracle_test::transport_w1_bruteforce(x, y), 3.0);
  EXPECT_DOUBLE_EQ(wasserstein1(x, y), 3.0);
}

TEST(Wasserstein, EmptySampleThrows) {
  EXPECT_THROW(wasserstein1(std::vector<double>{}, std::vector<double>{1.0}), Error);
}

TEST(Wasserstein, MatchesTransportOracleUnequalSizes) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 5);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(size(rng)), b(size(rng));
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng) + 0.5;
    EXPECT_NEAR(wasserstein1(a, b), oracle_test::transport_w1_bruteforce(a, b), 1e-12);
  }
}

TEST(Wasserstein, SortedDifferenceFormulaForEqualSizes) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  std::vector<double> a(101), b(101);
  for (auto& v : a) v = g(rng);
  for (auto& v : b) v = 2.0 * g(rng);
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double ref = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) ref += std::abs(sa[i] - sb[i]);
  EXPECT_NEAR(wasserstein1(a, b), ref / 101.0, 1e-12);
}

TEST(Wasserstein, TriangleInequalityAndScaling) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> size(1, 40);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(size(rng)), b(size(rng)), c(size(rng));
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng) * 2 + 1;
    for (auto& v : c) v = g(rng) - 1;
    const double ab = wasserstein1(a, b), bc = wasserstein1(b, c), ac = wasserstein1(a, c);
    EXPECT_LE(ac, ab + bc + 1e-12);
    EXPECT_NEAR(ab, wasserstein1(b, a), 1e-12);
    const double alpha = 0.1 + trial * 0.05;
    std::vector<double> sa = a, sb = b;
    for (auto& v : sa) v *= alpha;
    for (auto& v : sb) v *= alpha;
    EXPECT_NEAR(wasserstein1(sa, sb), alpha * ab, 1e-12 * std::max(1.0, alpha * ab));
  }
}

TEST(Kde, SingleGaussianPeak) {
  const std::vector<double> s{0.0}, q{0.0};
  EXPECT_NEAR(gaussian_kde(s, 1.0, q)[0], 1.0 / std::sqrt(2 * kPi), 1e-15);
  EXPECT_NEAR(gaussian_kde(s, 1.0, q)[0], 0.39894, 1e-5);
}

TEST(Kde, TailSymmetryAndNormalization) {
  const std::vector<double> s{-1.0, 1.0};
  const std::vector<double> q{0.5, -0.5, 1.0 + 10.0};
  const auto d = gaussian_kde(s, 1.0, q);
  EXPECT_DOUBLE_EQ(d[0], d[1]);
  EXPECT_LT(d[2], 1e-8);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::vector<double> sample(300);
  for (auto& v : sample) v = g(rng);
  const double h = scott_bandwidth(sample);
  const double lo = *std::min_element(sample.begin(), sample.end()) - 6 * h;
  const double hi = *std::max_element(sample.begin(), sample.end()) + 6 * h;
  const int n = 4000;
  std::vector<double> grid(n + 1);
  for (int k = 0; k <= n; ++k) grid[k] = lo + (hi - lo) * k / n;
  const auto dens = gaussian_kde(sample, h, grid);
  double integral = 0;
  for (int k = 0; k < n; ++k) integral += 0.5 * (dens[k] + dens[k + 1]) * (hi - lo) / n;
  EXPECT_NEAR(integral, 1.0, 1e-3);
  for (double v : dens) EXPECT_GE(v, 0.0);
}

TEST(Kde, RejectsNonPositiveBandwidth) {
  const std::vector<double> s{0.0}, q{0.0};
  EXPECT_THROW(gaussian_kde(s, 0.0, q), Error);
  EXPECT_THROW(gaussian_kde(s, -1.0, q), Error);
}

TEST(Kde, ScottBandwidth) {
  const std::vector<double> s{1, 2, 3, 4};
  const double sigma = std::sqrt(5.0 / 3.0);
  EXPECT_NEAR(scott_bandwidth(s), sigma * std::pow(4.0, -0.2), 1e-14);
}

TEST(GeneralizedEig, IdentityAndDiagonal) {
  const auto id = generalized_sym_eig(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity());
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(id.values(k), 1.0, 1e-9);

  Eigen::Matrix2d A = Eigen::Vector2d(1.0, 2.0).asDiagonal();
  const auto r = generalized_sym_eig(A, Eigen::Matrix2d::Identity());
  EXPECT_NEAR(r.values(0), 2.0, 1e-9);
  EXPECT_NEAR(r.values(1), 1.0, 1e-9);
  EXPECT_NEAR(std::abs(r.vectors(1, 0)), 1.0, 1e-9);
  EXPECT_NEAR(r.vectors(0, 0), 0.0, 1e-12);
}

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd X(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = g(rng);
  return X * X.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
}

Eigen::MatrixXd random_sym(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd X(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = g(rng);
  return 0.5 * (X + X.transpose());
}

TEST(GeneralizedEig, MatchesClosedForm2x2) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Matrix2d A = random_sym(rng, 2);
    const Eigen::Matrix2d B = random_spd(rng, 2);
    // The solver's contract includes the diagonal shift of B.
    const Eigen::Matrix2d Breg = B + (1e-10 * B.trace() / 2.0) * Eigen::Matrix2d::Identity();
    const auto [l1, l2] = oracle_test::pencil_eigenvalues_2x2(A, Breg);
    const auto r = generalized_sym_eig(A, B);
    const double tol = 1e-10 * std::max({1.0, std::abs(l1), std::abs(l2)});
    EXPECT_NEAR(r.values(0), l1, tol);
    EXPECT_NEAR(r.values(1), l2, tol);
  }
}

TEST(GeneralizedEig, ResidualsAndBOrthonormality) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd A = random_sym(rng, 5);
    const Eigen::MatrixXd B = random_spd(rng, 5);
    const auto r = generalized_sym_eig(A, B);
    for (int k = 0; k < 5; ++k) {
      const Eigen::VectorXd v = r.vectors.col(k);
      EXPECT_LE((A * v - r.values(k) * B * v).norm(), 1e-8 * A.norm());
      if (k > 0) EXPECT_GE(r.values(k - 1), r.values(k));
    }
    const Eigen::MatrixXd G = r.vectors.transpose() * B * r.vectors;
    EXPECT_LT((G - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GeneralizedEig, IndefiniteBThrows) {
  Eigen::Matrix2d B;
  B << 1, 0, 0, -1;
  EXPECT_THROW(generalized_sym_eig(Eigen::Matrix2d::Identity(), B), Error);
  Eigen::Matrix2d A;
  A << 1, 2, 0, 1;
  EXPECT_THROW(generalized_sym_eig(A, Eigen::Matrix2d::Identity()), Error);
}

TEST(HistogramTest, Examples) {
  auto h = histogram(std::vector<double>{0.5}, 1, 0.0, 1.0);
  EXPECT_EQ(h.counts, std::vector<std::size_t>{1});

  // 0.5 sits on the shared edge; bins are closed on the right.
  h = histogram(std::vector<double>{-1, 0.5, 2}, 2, 0.0, 1.0);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(h.underflow, 1u);
  EXPECT_EQ(h.overflow, 1u);
  EXPECT_EQ(h.in_range(), 1u);

  h = histogram(std::vector<double>{0.0, 1.0}, 4, 0.0, 1.0);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 0, 0, 1}));
}

TEST(HistogramTest, UniformCountsWithinBinomialBound) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(10000);
  for (auto& x : v) x = u(rng);
  const auto h = histogram(v, 10, 0.0, 1.0);
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  for (auto c : h.counts) EXPECT_LE(std::abs(static_cast<double>(c) - 1000.0), 5 * sigma);
  EXPECT_EQ(h.in_range(), 10000u);
  EXPECT_EQ(h.support_width(), 10u);
}

TEST(HistogramTest, InvalidRange) {
  EXPECT_THROW(histogram(std::vector<double>{}, 0, 0, 1), Error);
  EXPECT_THROW(histogram(std::vector<double>{}, 3, 1, 1), Error);
}

TEST(Geometry, RightAngleAndTransDihedral) {
  const Eigen::Vector3d a(1, 0, 0), o(0, 0, 0), y(0, 1, 0);
  EXPECT_NEAR(angle<double>(a, o, y), kPi / 2, 1e-15);
  const Eigen::Vector3d c(0, 0, 1), d(-1, 0, 1);
  EXPECT_DOUBLE_EQ(dihedral<double>(a, o, c, d), kPi);
}

TEST(Geometry, DihedralMatchesRotationBruteForce) {
  // Rotate the last point about the b-c axis and check the reported angle
  // tracks the applied rotation.
  const Eigen::Vector3d a(1, 0, 0), b(0, 0, 0), c(0, 0, 1), d0(1, 0, 1);
  for (int k = -179; k <= 180; k += 7) {
    const double t = k * kPi / 180.0;
    const Eigen::Vector3d d = c + Eigen::AngleAxisd(t, Eigen::Vector3d::UnitZ()) * (d0 - c);
    EXPECT_NEAR(dihedral<double>(a, b, c, d), t, 1e-12);
  }
}

TEST(Geometry, DihedralInvariantUnderRotationAndFlipsUnderMirror) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Points3d P = random_points(rng, 4);
    const double phi = dihedral<double>(P.row(0), P.row(1), P.row(2), P.row(3));
    const Points3d Q = rigid(P, random_rotation(rng), Eigen::Vector3d::Random());
    EXPECT_NEAR(dihedral<double>(Q.row(0), Q.row(1), Q.row(2), Q.row(3)), phi, 1e-10);
    Points3d M = P;
    M.col(0) *= -1.0;
    const double mirrored = dihedral<double>(M.row(0), M.row(1), M.row(2), M.row(3));
    if (std::abs(std::abs(phi) - kPi) > 1e-9) EXPECT_NEAR(mirrored, -phi, 1e-10);
  }
}

TEST(Geometry, DegenerateInputsThrow) {
  const Eigen::Vector3d a(1, 0, 0), b(0, 0, 0), c(0, 0, 1), d(0, 0, 2);
  EXPECT_THROW(dihedral<double>(a, b, c, d), Error);
  EXPECT_THROW(angle<double>(a, b, b), Error);
}

TEST(PairwiseSum, MatchesNaiveOnIntegers) {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(pairwise_sum(v), 500500.0);
  EXPECT_EQ(pairwise_sum(std::span<const double>{}), 0.0);
}

}  // namespace
}  // namespace almd
