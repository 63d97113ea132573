#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "almd/cgnet.hpp"
#include "almd/rng.hpp"
#include "oracles.hpp"

using namespace almd;
namespace fs = std::filesystem;

namespace {

// Straightforward per-bead evaluator written from the documented formula and
// parameter layout; shares no code with the library implementation.
double slow_energy(const PotentialParams& p, const Points3d& R, const std::vector<int>& types) {
  const int F = p.hyper.width, G = p.hyper.n_rbf, H = F / 2, M = static_cast<int>(R.rows());
  const double* th = p.theta.data();
  std::size_t off = 0;
  auto take = [&](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = th[off++];
    return m;
  };
  auto softplus_shift = [](double x) { return std::log(1.0 + std::exp(x)) - std::log(2.0); };
  const Eigen::MatrixXd emb = take(F, p.hyper.n_types);
  std::vector<Eigen::VectorXd> x(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) x[static_cast<std::size_t>(i)] = emb.col(types[static_cast<std::size_t>(i)]);
  for (int b = 0; b < p.hyper.n_blocks; ++b) {
    const Eigen::MatrixXd L = take(F, F), W1 = take(F, G), W2 = take(F, F), D1 = take(F, F), d1 = take(F, 1),
                          D2 = take(F, F), d2 = take(F, 1);
    std::vector<Eigen::VectorXd> next = x;
    for (int i = 0; i < M; ++i) {
      Eigen::VectorXd y = Eigen::VectorXd::Zero(F);
      for (int j = 0; j < M; ++j) {
        if (j == i) continue;
        const double r = (R.row(i) - R.row(j)).norm();
        if (r >= p.hyper.r_cut) continue;
        Eigen::VectorXd e(G);
        for (int k = 0; k < G; ++k)
          e[k] = std::exp(-p.gamma * (r - p.mu[k]) * (r - p.mu[k])) * 0.5 *
                 (std::cos(M_PI * r / p.hyper.r_cut) + 1.0);
        const Eigen::VectorXd filt = W2 * (W1 * e).unaryExpr(softplus_shift);
        y += (L * x[static_cast<std::size_t>(j)]).cwiseProduct(filt);
      }
      next[static_cast<std::size_t>(i)] += D2 * (D1 * y + d1).unaryExpr(softplus_shift) + d2;
    }
    x = next;
  }
  const Eigen::MatrixXd A1 = take(H, F), a1 = take(H, 1), a2 = take(H, 1), c = take(1, 1);
  double u = 0.0;
  for (int i = 0; i < M; ++i)
    u += a2.col(0).dot((A1 * x[static_cast<std::size_t>(i)] + a1).unaryExpr(softplus_shift)) + c(0, 0);
  EXPECT_EQ(off, static_cast<std::size_t>(p.theta.size()));
  u *= p.hyper.energy_scale;
  if (p.prior.enabled) {
    for (int m = 0; m + 1 < M; ++m) {
      const double dr = (R.row(m + 1) - R.row(m)).norm() - p.prior.bond_r0[static_cast<std::size_t>(m)];
      u += 0.5 * p.prior.bond_k[static_cast<std::size_t>(m)] * dr * dr;
    }
    for (int i = 0; i < M; ++i)
      for (int j = i + 2; j < M; ++j)
        u += p.prior.rep_epsilon * std::pow(p.prior.rep_sigma / (R.row(i) - R.row(j)).norm(), 12);
  }
  return u;
}

Points3d random_frame(int M, Rng& rng, double spread = 0.35) {
  std::normal_distribution<double> g(0.0, spread);
  Points3d R(M, 3);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < 3; ++k) R(i, k) = g(rng);
  return R;
}

Points3d chain_frame(int M, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Points3d R(M, 3);
  R.row(0).setZero();
  for (int i = 1; i < M; ++i) {
    // Self-avoiding: non-neighbours stay at least 0.3 nm apart.
    for (bool ok = false; !ok;) {
      Eigen::RowVector3d d(g(rng), g(rng), g(rng));
      R.row(i) = R.row(i - 1) + 0.38 * d.normalized();
      ok = true;
      for (int j = 0; j + 1 < i; ++j) ok = ok && (R.row(i) - R.row(j)).norm() > 0.3;
    }
  }
  return R;
}

PotentialParams small_net(int n_types, std::uint64_t seed, int blocks = 2, int width = 8, int rbf = 6) {
  NetHyper h;
  h.n_types = n_types;
  h.n_blocks = blocks;
  h.width = width;
  h.n_rbf = rbf;
  h.r_cut = 1.0;
  h.energy_scale = 3.0;
  return init_potential(h, seed);
}

PriorParams some_prior(int M) {
  PriorParams pr;
  pr.bond_r0.assign(static_cast<std::size_t>(M - 1), 0.38);
  pr.bond_k.assign(static_cast<std::size_t>(M - 1), 500.0);
  pr.rep_sigma = 0.3;
  pr.rep_epsilon = 2.5;
  return pr;
}

Points3d fd_forces(const PotentialParams& p, const Points3d& R, const std::vector<int>& t, double h) {
  Points3d f(R.rows(), 3);
  for (Eigen::Index i = 0; i < R.rows(); ++i)
    for (int k = 0; k < 3; ++k) {
      Points3d a = R, b = R;
      a(i, k) += h;
      b(i, k) -= h;
      f(i, k) = -(cg_energy(p, a, t) - cg_energy(p, b, t)) / (2 * h);
    }
  return f;
}

std::vector<NetHyper> presets() {
  std::vector<NetHyper> out;
  NetHyper def;  // library defaults
  def.n_types = 5;
  out.push_back(def);
  NetHyper tiny;
  tiny.n_types = 5;
  tiny.n_blocks = 1;
  tiny.width = 4;
  tiny.n_rbf = 3;
  tiny.r_cut = 0.8;
  out.push_back(tiny);
  NetHyper deep = def;
  deep.n_blocks = 3;
  deep.width = 16;
  deep.energy_scale = 2.5;
  out.push_back(deep);
  return out;
}

}  // namespace

TEST(Rbf, PeaksAndCutoff) {
  PotentialParams p = small_net(2, 1);
  // Away from the switch, e_k(mu_k) / f_cut = 1.
  const double r = p.mu[2];
  const double fc = 0.5 * (std::cos(M_PI * r / p.hyper.r_cut) + 1.0);
  EXPECT_NEAR(rbf_expand(p, r)[2] / fc, 1.0, 1e-15);
  EXPECT_TRUE(rbf_expand(p, p.hyper.r_cut).isZero(0.0));
  EXPECT_TRUE(rbf_expand(p, 5.0).isZero(0.0));
  // Slope vanishes at the cutoff, one-sided difference from below.
  const double h = 1e-7;
  const Eigen::VectorXd slope = (rbf_expand(p, p.hyper.r_cut) - rbf_expand(p, p.hyper.r_cut - h)) / h;
  EXPECT_LE(slope.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE(rbf_expand_derivative(p, p.hyper.r_cut).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(rbf_expand(p, -0.1), Error);
}

TEST(Rbf, DerivativeMatchesFiniteDifference) {
  PotentialParams p = small_net(2, 1);
  for (double r = 0.05; r < 1.0; r += 0.07) {
    const Eigen::VectorXd fd = (rbf_expand(p, r + 1e-6) - rbf_expand(p, r - 1e-6)) / 2e-6;
    EXPECT_LE((fd - rbf_expand_derivative(p, r)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Params, ValidateAndCount) {
  PotentialParams p = small_net(3, 2);
  EXPECT_EQ(static_cast<std::size_t>(p.theta.size()), parameter_count(p.hyper));
  EXPECT_NO_THROW(p.validate());
  PotentialParams q = p;
  q.mu[1] = q.mu[0];
  EXPECT_THROW(q.validate(), Error);
  q = p;
  q.mu[q.mu.size() - 1] = 2.0;
  EXPECT_THROW(q.validate(), Error);
  q = p;
  q.theta[3] = std::nan("");
  EXPECT_THROW(q.validate(), NonFiniteError);
  q = p;
  q.hyper.r_cut = 0.0;
  EXPECT_THROW(q.validate(), Error);
}

TEST(Params, InitIsDeterministic) {
  EXPECT_EQ(small_net(4, 9).theta, small_net(4, 9).theta);
  EXPECT_NE(small_net(4, 9).theta, small_net(4, 10).theta);
}

TEST(Energy, MatchesSlowReference) {
  Rng rng = make_rng(1, 0);
  for (int trial = 0; trial < 10; ++trial) {
    PotentialParams p = small_net(5, 100 + static_cast<std::uint64_t>(trial));
    if (trial % 2) p.prior = some_prior(5);
    p.prior.enabled = trial % 2 == 1;
    const Points3d R = random_frame(5, rng);
    const auto t = default_types(5);
    const double fast = cg_energy(p, R, t), slow = slow_energy(p, R, t);
    EXPECT_NEAR(fast, slow, 1e-12 * std::max(1.0, std::abs(slow)));
  }
  for (const NetHyper& h : presets()) {
    const PotentialParams p = init_potential(h, 3);
    const Points3d R = random_frame(5, rng);
    EXPECT_NEAR(cg_energy(p, R, default_types(5)), slow_energy(p, R, default_types(5)), 1e-11);
  }
}

TEST(Energy, TranslationInvariantTwoBeads) {
  PotentialParams p = small_net(2, 4);
  Points3d R(2, 3);
  R << 0, 0, 0, 0.4, 0.1, -0.2;
  const double u = cg_energy(p, R, default_types(2));
  const Points3d R2 = R.rowwise() + Eigen::RowVector3d(3.0, -7.0, 11.0);
  EXPECT_LE(std::abs(cg_energy(p, R2, default_types(2)) - u), 1e-10);
}

TEST(Energy, LocalityBeyondCutoff) {
  PotentialParams p = small_net(2, 5);
  Points3d R(2, 3);
  R << 0, 0, 0, 1.5, 0, 0;
  const double u = cg_energy(p, R, default_types(2));
  const double u0 = cg_energy(p, Points3d(R.topRows(1)), std::vector<int>{0});
  const double u1 = cg_energy(p, Points3d(R.bottomRows(1)), std::vector<int>{1});
  EXPECT_NEAR(u, u0 + u1, 1e-12);
  const Points3d f = cg_forces(p, R, default_types(2));
  EXPECT_TRUE(f.isZero(0.0));
}

TEST(Energy, PermutationOfIdenticalTypes) {
  PotentialParams p = small_net(3, 6);
  Rng rng = make_rng(2, 0);
  const Points3d R = random_frame(6, rng);
  const std::vector<int> t{0, 1, 1, 2, 1, 0};
  const double u = cg_energy(p, R, t);
  // Swap beads 1 and 4 (both type 1) and beads 0 and 5 (both type 0).
  Points3d Q = R;
  Q.row(1) = R.row(4);
  Q.row(4) = R.row(1);
  Q.row(0) = R.row(5);
  Q.row(5) = R.row(0);
  EXPECT_NEAR(cg_energy(p, Q, t), u, 1e-10);
}

TEST(Energy, NonFiniteReportsTensor) {
  PotentialParams p = small_net(2, 7);
  Points3d R(2, 3);
  R << 0, 0, 0, 0.3, 0, 0;
  p.theta.setConstant(1e300);
  try {
    cg_energy(p, R, default_types(2));
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("tensor"), std::string::npos);
  }
  R(1, 1) = std::nan("");
  EXPECT_THROW(cg_energy(small_net(2, 7), R, default_types(2)), NonFiniteError);
  EXPECT_THROW(cg_energy(small_net(2, 7), Points3d::Zero(2, 3), std::vector<int>{0, 5}), Error);
}

TEST(Forces, MatchFiniteDifferencesForEveryPreset) {
  Rng rng = make_rng(3, 0);
  for (const NetHyper& h : presets()) {
    for (int trial = 0; trial < 4; ++trial) {
      PotentialParams p = init_potential(h, 20 + static_cast<std::uint64_t>(trial));
      p.prior = some_prior(5);
      p.prior.enabled = trial % 2 == 0;
      const Points3d R = chain_frame(5, rng);
      const auto t = default_types(5);
      const Points3d f = cg_forces(p, R, t);
      const Points3d fd = fd_forces(p, R, t, 1e-5);
      const double rel = (f - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-3);
      EXPECT_LE(rel, 1e-5) << "width " << h.width << " trial " << trial;
    }
  }
}

TEST(Forces, NetForceZeroAndRigidMotionEquivariance) {
  Rng rng = make_rng(4, 0);
  PotentialParams p = small_net(6, 8);
  p.prior = some_prior(6);
  const auto t = default_types(6);
  for (int draw = 0; draw < 100; ++draw) {
    const Points3d R = chain_frame(6, rng);
    const auto ef = cg_energy_forces(p, R, t);
    EXPECT_LE(ef.forces.colwise().sum().norm(), 1e-8);
    const Eigen::Matrix3d Q = oracle_test::random_rotation(rng);
    std::normal_distribution<double> g(0.0, 2.0);
    const Eigen::RowVector3d shift(g(rng), g(rng), g(rng));
    const Points3d R2 = (R * Q.transpose()).rowwise() + shift;
    const auto ef2 = cg_energy_forces(p, R2, t);
    EXPECT_LE(std::abs(ef2.energy - ef.energy), 1e-10 * std::max(1.0, std::abs(ef.energy)));
    EXPECT_LE((ef2.forces - ef.forces * Q.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Forces, MirrorReflection) {
  Rng rng = make_rng(5, 0);
  PotentialParams p = small_net(5, 9);
  const Points3d R = chain_frame(5, rng);
  Eigen::Matrix3d mirror = Eigen::Matrix3d::Identity();
  mirror(0, 0) = -1.0;
  const Points3d f = cg_forces(p, R, default_types(5));
  const Points3d fm = cg_forces(p, R * mirror, default_types(5));
  EXPECT_LE((fm - f * mirror).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Gradient, ParameterGradientMatchesFiniteDifferences) {
  Rng rng = make_rng(6, 0);
  PotentialParams p = small_net(4, 10);
  const Points3d R = chain_frame(4, rng);
  const auto t = default_types(4);
  const Eigen::VectorXd g = energy_parameter_gradient(p, R, t);
  std::uniform_int_distribution<Eigen::Index> pick(0, p.theta.size() - 1);
  for (int s = 0; s < 60; ++s) {
    const Eigen::Index k = s < 10 ? p.theta.size() - 1 - s : pick(rng);
    PotentialParams a = p, b = p;
    a.theta[k] += 1e-6;
    b.theta[k] -= 1e-6;
    const double fd = (cg_energy(a, R, t) - cg_energy(b, R, t)) / 2e-6;
    EXPECT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << k;
  }
}

TEST(Loss, HandExamples) {
  PotentialParams p = small_net(1, 11, 0);
  p.theta.setZero();  // U is constant, so F_theta = 0
  CGFrame f{0.0, Points3d::Zero(1, 3), Points3d::Zero(1, 3)};
  (*f.forces)(0, 0) = -1.0;  // v = F_theta - F_CG = (1, 0, 0)
  const std::vector<CGFrame> batch{f};
  EXPECT_NEAR(fm_loss(p, batch, std::vector<int>{0}), 1.0 / 3.0, 1e-15);
  f.forces->setZero();
  EXPECT_EQ(fm_loss(p, std::vector<CGFrame>{f}, std::vector<int>{0}), 0.0);
}

TEST(Loss, ZeroWhenTargetsArePredictionsAndMeanSemantics) {
  Rng rng = make_rng(7, 0);
  PotentialParams p = small_net(5, 12);
  const auto t = default_types(5);
  std::vector<CGFrame> frames;
  for (int i = 0; i < 4; ++i) {
    const Points3d R = chain_frame(5, rng);
    frames.push_back({0.0, R, cg_forces(p, R, t)});
  }
  EXPECT_EQ(fm_loss(p, frames, t), 0.0);
  for (auto& f : frames) *f.forces += random_frame(5, rng, 3.0);
  const double l = fm_loss(p, frames, t);
  EXPECT_GT(l, 0.0);
  std::vector<CGFrame> doubled = frames;
  doubled.insert(doubled.end(), frames.begin(), frames.end());
  EXPECT_NEAR(fm_loss(p, doubled, t), l, 1e-12 * l);
  frames[0].forces.reset();
  EXPECT_THROW(fm_loss(p, frames, t), Error);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(8, 0);
  for (bool prior : {false, true}) {
    PotentialParams p = small_net(5, 13);
    p.prior = some_prior(5);
    p.prior.enabled = prior;
    const auto t = default_types(5);
    std::vector<CGFrame> frames;
    for (int i = 0; i < 3; ++i) frames.push_back({0.0, chain_frame(5, rng), random_frame(5, rng, 5.0)});
    const LossGradient lg = fm_loss_and_grad(p, frames, t);
    EXPECT_NEAR(lg.loss, fm_loss(p, frames, t), 1e-12 * lg.loss);
    std::uniform_int_distribution<Eigen::Index> pick(0, p.theta.size() - 1);
    for (int s = 0; s < 40; ++s) {
      const Eigen::Index k = s < 5 ? s : pick(rng);
      PotentialParams a = p, b = p;
      a.theta[k] += 1e-6;
      b.theta[k] -= 1e-6;
      const double fd = (fm_loss(a, frames, t) - fm_loss(b, frames, t)) / 2e-6;
      EXPECT_NEAR(lg.grad[k], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "param " << k;
    }
  }
}

TEST(Prior, FitFromFrames) {
  std::vector<CGFrame> frames;
  const double d[] = {0.36, 0.38, 0.40};
  for (double x : d) {
    Points3d R(3, 3);
    R << 0, 0, 0, x, 0, 0, x, 0.5, 0;
    frames.push_back({0.0, R, std::nullopt});
  }
  const PriorParams pr = fit_prior(frames, 300.0);
  EXPECT_NEAR(pr.bond_r0[0], 0.38, 1e-12);
  const double var = (0.02 * 0.02 * 2) / 3.0;
  EXPECT_NEAR(pr.bond_k[0], kBoltzmann * 300.0 / var, 1e-6);
  EXPECT_NEAR(pr.bond_r0[1], 0.5, 1e-12);
  EXPECT_NEAR(pr.rep_sigma, std::sqrt(0.36 * 0.36 + 0.25), 1e-12);
  EXPECT_NEAR(pr.rep_epsilon, kBoltzmann * 300.0, 1e-15);
}

TEST(Checkpoint, RoundTripAndErrors) {
  const fs::path dir = fs::temp_directory_path() / "almd_test_cgnet";
  fs::remove_all(dir);
  fs::create_directories(dir);
  PotentialParams p = small_net(5, 14);
  p.prior = some_prior(5);
  save_checkpoint(dir / "m.ckpt", p);
  const PotentialParams q = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(q.theta, p.theta);
  EXPECT_EQ(q.mu, p.mu);
  EXPECT_EQ(q.gamma, p.gamma);
  EXPECT_EQ(q.hyper.width, p.hyper.width);
  EXPECT_EQ(q.hyper.energy_scale, p.hyper.energy_scale);
  EXPECT_EQ(q.prior.bond_k, p.prior.bond_k);
  EXPECT_EQ(q.prior.rep_sigma, p.prior.rep_sigma);
  EXPECT_TRUE(q.prior.enabled);
  Rng rng = make_rng(9, 0);
  const Points3d R = chain_frame(5, rng);
  EXPECT_EQ(cg_energy(p, R, default_types(5)), cg_energy(q, R, default_types(5)));

  std::string bytes;
  {
    std::ifstream is(dir / "m.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  EXPECT_EQ(bytes.substr(0, 8), "ALMDNET1");
  auto dump = [&](const std::string& name, const std::string& data) {
    std::ofstream os(dir / name, std::ios::binary);
    os << data;
    return dir / name;
  };
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(load_checkpoint(dump("bad.ckpt", bad)), CheckpointError);
  EXPECT_THROW(load_checkpoint(dump("short.ckpt", bytes.substr(0, bytes.size() - 3))), CheckpointError);
  std::string ver = bytes;
  ver[8] = 7;
  EXPECT_THROW(load_checkpoint(dump("ver.ckpt", ver)), CheckpointError);
}

TEST(Dual, Arithmetic) {
  const Dual x(2.0, 1.0);
  const Dual y = x * x * 3.0 + exp(x) / x;
  // d/dx (3x^2 + e^x / x) = 6x + e^x (x - 1) / x^2
  EXPECT_NEAR(y.d, 12.0 + std::exp(2.0) / 4.0, 1e-12);
  EXPECT_NEAR(sqrt(x).d, 0.5 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(log1p(x).d, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(cos(x).d, -std::sin(2.0), 1e-15);
}
