#include "almd/cgnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "almd/parallel.hpp"
#include "almd/rng.hpp"
#include "binio.hpp"

namespace almd {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

constexpr double kLn2 = std::numbers::ln2;

/// ssp and its derivative (the logistic function) from one exp(-|x|).
template <typename S>
void ssp_and_sigmoid(const Mat<S>& x, Mat<S>& s, Mat<S>& sig) {
  using std::exp;
  using std::log1p;
  s.resize(x.rows(), x.cols());
  sig.resize(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const S& v = x.data()[k];
    const bool pos = v > 0.0;
    const S e = exp(pos ? S(-v) : v);
    const S inv = S(1.0) / (S(1.0) + e);
    s.data()[k] = (pos ? v : S(0.0)) + log1p(e) - kLn2;
    sig.data()[k] = pos ? inv : S(e * inv);
  }
}

template <typename S>
struct Block {
  Mat<S> L, W1, W2, D1, D2;
  Vec<S> d1, d2;
};

template <typename S>
struct Weights {
  Mat<S> emb;
  std::vector<Block<S>> blocks;
  Mat<S> A1;
  Vec<S> a1, a2, c;

  // Visits every tensor in layout order.
  template <typename Fn>
  void visit(Fn&& fn) {
    fn(emb);
    for (auto& b : blocks) {
      fn(b.L);
      fn(b.W1);
      fn(b.W2);
      fn(b.D1);
      fn(b.d1);
      fn(b.D2);
      fn(b.d2);
    }
    fn(A1);
    fn(a1);
    fn(a2);
    fn(c);
  }
};

template <typename S>
Weights<S> zero_weights(const NetHyper& h) {
  const int F = h.width, G = h.n_rbf, H = h.width / 2;
  Weights<S> w;
  w.emb = Mat<S>::Zero(F, h.n_types);
  w.blocks.resize(static_cast<std::size_t>(h.n_blocks));
  for (auto& b : w.blocks) {
    b.L = Mat<S>::Zero(F, F);
    b.W1 = Mat<S>::Zero(F, G);
    b.W2 = Mat<S>::Zero(F, F);
    b.D1 = Mat<S>::Zero(F, F);
    b.d1 = Vec<S>::Zero(F);
    b.D2 = Mat<S>::Zero(F, F);
    b.d2 = Vec<S>::Zero(F);
  }
  w.A1 = Mat<S>::Zero(H, F);
  w.a1 = Vec<S>::Zero(H);
  w.a2 = Vec<S>::Zero(H);
  w.c = Vec<S>::Zero(1);
  return w;
}

template <typename S>
Weights<S> unpack(const NetHyper& h, const Eigen::VectorXd& theta) {
  Weights<S> w = zero_weights<S>(h);
  Eigen::Index off = 0;
  w.visit([&](auto& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = S(theta[off + k]);
    off += m.size();
  });
  return w;
}

template <typename S>
Vec<S> pack(Weights<S>& w, std::size_t n) {
  Vec<S> out(static_cast<Eigen::Index>(n));
  Eigen::Index off = 0;
  w.visit([&](auto& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) out[off + k] = m.data()[k];
    off += m.size();
  });
  return out;
}

struct RbfConsts {
  std::vector<double> mu;
  double gamma, r_cut;
};

template <typename S>
void rbf_with_derivative(const RbfConsts& k, const S& r, S* e, S* de) {
  using std::cos;
  using std::exp;
  using std::sin;
  const std::size_t G = k.mu.size();
  if (!(r < k.r_cut)) {
    for (std::size_t g = 0; g < G; ++g) e[g] = de[g] = S(0.0);
    return;
  }
  const double w = std::numbers::pi / k.r_cut;
  const S fc = 0.5 * (cos(w * r) + 1.0);
  const S dfc = -0.5 * w * sin(w * r);
  for (std::size_t g = 0; g < G; ++g) {
    const S x = r - k.mu[g];
    const S gauss = exp(-k.gamma * x * x);
    e[g] = gauss * fc;
    de[g] = gauss * (dfc - 2.0 * k.gamma * x * fc);
  }
}

void check_finite(bool enabled, bool ok, const char* tensor) {
  if (enabled && !ok) throw NonFiniteError(std::string("cg potential: first non-finite tensor is ") + tensor);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      using std::isfinite;
      if (!isfinite(m(i, j))) return false;
    }
  return true;
}

struct PassOptions {
  bool want_coord_grad = false;
  bool want_param_grad = false;
  bool check = true;
};

/// Network part of the energy and, on request, its gradients with respect to
/// the coordinates (added to *grad_R) and to the weights (added to *grad_w).
template <typename S>
S network_pass(const Weights<S>& w, const NetHyper& h, const RbfConsts& rk, const Points<S>& R,
               std::span<const int> types, const PassOptions& opt, Points<S>* grad_R, Weights<S>* grad_w) {
  using std::sqrt;
  const Eigen::Index M = R.rows();
  const int F = h.width, G = h.n_rbf;

  // Pair list inside the cutoff.
  std::vector<int> pi, pj;
  std::vector<S> pr;
  std::vector<Vec3<S>> pu;
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = i + 1; j < M; ++j) {
      const Vec3<S> d = (R.row(i) - R.row(j)).transpose();
      const S r2 = d.squaredNorm();
      if (!(r2 < rk.r_cut * rk.r_cut)) continue;
      const S r = sqrt(r2);
      pi.push_back(static_cast<int>(i));
      pj.push_back(static_cast<int>(j));
      pr.push_back(r);
      pu.push_back(d / r);
    }
  const auto P = static_cast<Eigen::Index>(pr.size());
  Mat<S> E(G, P), dE(G, P);
  for (Eigen::Index p = 0; p < P; ++p) rbf_with_derivative(rk, pr[static_cast<std::size_t>(p)], E.col(p).data(), dE.col(p).data());

  struct Tape {
    Mat<S> Xin, Z, A, Sg, Wf, Y, Hd;
    Mat<S> Sd, dA, dHd;  // activations and their slopes
  };
  std::vector<Tape> tape(w.blocks.size());

  Mat<S> X(F, M);
  for (Eigen::Index i = 0; i < M; ++i) {
    const int t = types[static_cast<std::size_t>(i)];
    if (t < 0 || t >= h.n_types) throw Error("cg potential: bead type out of range");
    X.col(i) = w.emb.col(t);
  }

  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    const auto& blk = w.blocks[b];
    Tape& tp = tape[b];
    tp.Xin = X;
    tp.Z = blk.L * X;
    tp.A = blk.W1 * E;
    ssp_and_sigmoid(tp.A, tp.Sg, tp.dA);
    tp.Wf = blk.W2 * tp.Sg;
    check_finite(opt.check, all_finite(tp.Wf), "filter");
    tp.Y = Mat<S>::Zero(F, M);
    for (Eigen::Index p = 0; p < P; ++p) {
      const int i = pi[static_cast<std::size_t>(p)], j = pj[static_cast<std::size_t>(p)];
      tp.Y.col(i) += tp.Z.col(j).cwiseProduct(tp.Wf.col(p));
      tp.Y.col(j) += tp.Z.col(i).cwiseProduct(tp.Wf.col(p));
    }
    tp.Hd = (blk.D1 * tp.Y).colwise() + blk.d1;
    ssp_and_sigmoid(tp.Hd, tp.Sd, tp.dHd);
    X = tp.Xin + ((blk.D2 * tp.Sd).colwise() + blk.d2);
    check_finite(opt.check, all_finite(X), "interaction features");
  }

  const Mat<S> Hr = (w.A1 * X).colwise() + w.a1;
  Mat<S> Sr, dHr;
  ssp_and_sigmoid(Hr, Sr, dHr);
  S U = (w.a2.transpose() * Sr).sum() + static_cast<double>(M) * w.c[0];
  U = h.energy_scale * U;
  {
    using std::isfinite;
    check_finite(opt.check, isfinite(U), "readout energy");
  }
  if (!opt.want_coord_grad && !opt.want_param_grad) return U;

  // Reverse sweep.
  const double sc = h.energy_scale;
  const bool pg = opt.want_param_grad;
  Mat<S> Sr_bar = (sc * w.a2).replicate(1, M);
  if (pg) {
    grad_w->a2 += sc * Sr.rowwise().sum();
    grad_w->c[0] += sc * static_cast<double>(M);
  }
  const Mat<S> Hr_bar = Sr_bar.cwiseProduct(dHr);
  if (pg) {
    grad_w->A1 += Hr_bar * X.transpose();
    grad_w->a1 += Hr_bar.rowwise().sum();
  }
  Mat<S> X_bar = w.A1.transpose() * Hr_bar;
  Mat<S> E_bar;
  if (opt.want_coord_grad) E_bar = Mat<S>::Zero(G, P);

  for (std::size_t b = w.blocks.size(); b-- > 0;) {
    const auto& blk = w.blocks[b];
    const Tape& tp = tape[b];
    const Mat<S>& V_bar = X_bar;
    const Mat<S> Hd_bar = (blk.D2.transpose() * V_bar).cwiseProduct(tp.dHd);
    if (pg) {
      auto& g = grad_w->blocks[b];
      g.D2 += V_bar * tp.Sd.transpose();
      g.d2 += V_bar.rowwise().sum();
      g.D1 += Hd_bar * tp.Y.transpose();
      g.d1 += Hd_bar.rowwise().sum();
    }
    const Mat<S> Y_bar = blk.D1.transpose() * Hd_bar;
    Mat<S> Z_bar = Mat<S>::Zero(F, M);
    Mat<S> Wf_bar(F, P);
    for (Eigen::Index p = 0; p < P; ++p) {
      const int i = pi[static_cast<std::size_t>(p)], j = pj[static_cast<std::size_t>(p)];
      Z_bar.col(j) += Y_bar.col(i).cwiseProduct(tp.Wf.col(p));
      Z_bar.col(i) += Y_bar.col(j).cwiseProduct(tp.Wf.col(p));
      Wf_bar.col(p) = Y_bar.col(i).cwiseProduct(tp.Z.col(j)) + Y_bar.col(j).cwiseProduct(tp.Z.col(i));
    }
    const Mat<S> A_bar = (blk.W2.transpose() * Wf_bar).cwiseProduct(tp.dA);
    if (pg) {
      auto& g = grad_w->blocks[b];
      g.W2 += Wf_bar * tp.Sg.transpose();
      g.W1 += A_bar * E.transpose();
      g.L += Z_bar * tp.Xin.transpose();
    }
    if (opt.want_coord_grad) E_bar += blk.W1.transpose() * A_bar;
    X_bar = X_bar + blk.L.transpose() * Z_bar;
  }
  if (pg)
    for (Eigen::Index i = 0; i < M; ++i) grad_w->emb.col(types[static_cast<std::size_t>(i)]) += X_bar.col(i);

  if (opt.want_coord_grad) {
    for (Eigen::Index p = 0; p < P; ++p) {
      S r_bar = E_bar.col(p).dot(dE.col(p));
      const Vec3<S> g = r_bar * pu[static_cast<std::size_t>(p)];
      grad_R->row(pi[static_cast<std::size_t>(p)]) += g.transpose();
      grad_R->row(pj[static_cast<std::size_t>(p)]) -= g.transpose();
    }
  }
  return U;
}

double prior_energy_grad(const PriorParams& pr, const Points3d& R, Points3d* grad_R) {
  if (!pr.enabled) return 0.0;
  const Eigen::Index M = R.rows();
  if (static_cast<Eigen::Index>(pr.bond_r0.size()) != std::max<Eigen::Index>(M - 1, 0))
    throw Error("cg prior: bond count does not match bead count");
  double e = 0.0;
  for (Eigen::Index m = 0; m + 1 < M; ++m) {
    const Eigen::Vector3d d = (R.row(m + 1) - R.row(m)).transpose();
    const double r = d.norm();
    const double dr = r - pr.bond_r0[static_cast<std::size_t>(m)];
    const double k = pr.bond_k[static_cast<std::size_t>(m)];
    e += 0.5 * k * dr * dr;
    if (grad_R) {
      const Eigen::Vector3d g = k * dr / r * d;
      grad_R->row(m + 1) += g.transpose();
      grad_R->row(m) -= g.transpose();
    }
  }
  const double s2 = pr.rep_sigma * pr.rep_sigma;
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = i + 2; j < M; ++j) {
      const Eigen::Vector3d d = (R.row(i) - R.row(j)).transpose();
      const double r2 = d.squaredNorm();
      const double q = s2 / r2;
      const double q6 = q * q * q;
      const double q12 = q6 * q6;
      e += pr.rep_epsilon * q12;
      if (grad_R) {
        const Eigen::Vector3d g = (-12.0 * pr.rep_epsilon * q12 / r2) * d;
        grad_R->row(i) += g.transpose();
        grad_R->row(j) -= g.transpose();
      }
    }
  return e;
}

RbfConsts rbf_consts(const PotentialParams& p) {
  return {std::vector<double>(p.mu.data(), p.mu.data() + p.mu.size()), p.gamma, p.hyper.r_cut};
}

void check_inputs(const PotentialParams& p, const Points3d& R, std::span<const int> types) {
  if (static_cast<Eigen::Index>(types.size()) != R.rows()) throw Error("cg potential: one type per bead required");
  if (!R.allFinite()) throw NonFiniteError("cg potential: first non-finite tensor is input coordinates");
  if (static_cast<std::size_t>(p.theta.size()) != parameter_count(p.hyper))
    throw Error("cg potential: parameter vector has the wrong length");
}

}  // namespace

std::size_t parameter_count(const NetHyper& h) {
  const std::size_t F = static_cast<std::size_t>(h.width), G = static_cast<std::size_t>(h.n_rbf), H = F / 2;
  return F * static_cast<std::size_t>(h.n_types) + static_cast<std::size_t>(h.n_blocks) * (4 * F * F + F * G + 2 * F) +
         H * F + 2 * H + 1;
}

void PotentialParams::validate() const {
  if (hyper.n_types < 1 || hyper.n_blocks < 0 || hyper.width < 2 || hyper.n_rbf < 1)
    throw Error("potential: invalid network sizes");
  if (!(hyper.r_cut > 0.0)) throw Error("potential: r_cut must be positive");
  if (mu.size() != hyper.n_rbf) throw Error("potential: one RBF centre per basis function required");
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    if (mu[k] < 0.0 || mu[k] > hyper.r_cut) throw Error("potential: RBF centre outside [0, r_cut]");
    if (k > 0 && !(mu[k] > mu[k - 1])) throw Error("potential: RBF centres must increase strictly");
  }
  if (!(gamma > 0.0)) throw Error("potential: RBF width must be positive");
  if (static_cast<std::size_t>(theta.size()) != parameter_count(hyper)) throw Error("potential: wrong parameter count");
  if (!theta.allFinite()) throw NonFiniteError("potential: non-finite weights");
  if (prior.bond_r0.size() != prior.bond_k.size()) throw Error("potential: prior bond arrays differ in length");
}

PotentialParams init_potential(const NetHyper& h, std::uint64_t seed) {
  PotentialParams p;
  p.hyper = h;
  const int G = h.n_rbf;
  p.mu = Eigen::VectorXd::LinSpaced(G, 0.0, G > 1 ? h.r_cut : 0.0);
  const double spacing = G > 1 ? h.r_cut / (G - 1) : h.r_cut;
  p.gamma = h.rbf_gamma > 0.0 ? h.rbf_gamma : 0.5 / (spacing * spacing);
  p.prior.enabled = false;

  Weights<double> w = zero_weights<double>(h);
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto fill = [&](Mat<double>& m, double fan_in) {
    const double s = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = s * u(rng);
  };
  fill(w.emb, 1.0);
  for (auto& b : w.blocks) {
    fill(b.L, h.width);
    fill(b.W1, h.n_rbf);
    fill(b.W2, h.width);
    fill(b.D1, h.width);
    fill(b.D2, h.width);
  }
  fill(w.A1, h.width);
  Mat<double> a2(w.a2.size(), 1);
  fill(a2, h.width / 2);
  w.a2 = a2.col(0);
  p.theta = pack(w, parameter_count(h));
  p.validate();
  return p;
}

PriorParams fit_prior(std::span<const CGFrame> frames, double temperature) {
  if (frames.empty()) throw Error("fit_prior: no frames");
  const Eigen::Index M = frames.front().coords.rows();
  const double kT = kBoltzmann * temperature;
  PriorParams pr;
  pr.enabled = true;
  pr.bond_r0.assign(static_cast<std::size_t>(std::max<Eigen::Index>(M - 1, 0)), 0.0);
  pr.bond_k.assign(pr.bond_r0.size(), 0.0);
  std::vector<std::vector<double>> samples(pr.bond_r0.size());
  double rmin = std::numeric_limits<double>::infinity();
  for (const auto& f : frames) {
    if (f.coords.rows() != M) throw Error("fit_prior: frames differ in bead count");
    for (Eigen::Index m = 0; m + 1 < M; ++m)
      samples[static_cast<std::size_t>(m)].push_back((f.coords.row(m + 1) - f.coords.row(m)).norm());
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = i + 2; j < M; ++j) rmin = std::min(rmin, (f.coords.row(i) - f.coords.row(j)).norm());
  }
  for (std::size_t m = 0; m < samples.size(); ++m) {
    const auto& s = samples[m];
    double mean = 0.0;
    for (double x : s) mean += x;
    mean /= static_cast<double>(s.size());
    double var = 0.0;
    for (double x : s) var += (x - mean) * (x - mean);
    var /= static_cast<double>(s.size());
    pr.bond_r0[m] = mean;
    pr.bond_k[m] = kT / std::max(var, 1e-8);
  }
  pr.rep_sigma = std::isfinite(rmin) ? rmin : 0.0;
  pr.rep_epsilon = std::isfinite(rmin) ? kT : 0.0;
  return pr;
}

std::vector<int> default_types(int n_beads) {
  std::vector<int> t(static_cast<std::size_t>(n_beads));
  for (int i = 0; i < n_beads; ++i) t[static_cast<std::size_t>(i)] = i;
  return t;
}

Eigen::VectorXd rbf_expand(const PotentialParams& p, double r) {
  if (r < 0.0) throw Error("rbf_expand: negative distance");
  Eigen::VectorXd e(p.hyper.n_rbf), de(p.hyper.n_rbf);
  rbf_with_derivative(rbf_consts(p), r, e.data(), de.data());
  return e;
}

Eigen::VectorXd rbf_expand_derivative(const PotentialParams& p, double r) {
  Eigen::VectorXd e(p.hyper.n_rbf), de(p.hyper.n_rbf);
  rbf_with_derivative(rbf_consts(p), r, e.data(), de.data());
  return de;
}

double cg_energy(const PotentialParams& p, const Points3d& R, std::span<const int> types) {
  check_inputs(p, R, types);
  const Weights<double> w = unpack<double>(p.hyper, p.theta);
  const double u = network_pass<double>(w, p.hyper, rbf_consts(p), R, types, {}, nullptr, nullptr);
  return u + prior_energy_grad(p.prior, R, nullptr);
}

CgEnergyForces cg_energy_forces(const PotentialParams& p, const Points3d& R, std::span<const int> types) {
  check_inputs(p, R, types);
  const Weights<double> w = unpack<double>(p.hyper, p.theta);
  Points3d grad = Points3d::Zero(R.rows(), 3);
  PassOptions opt;
  opt.want_coord_grad = true;
  CgEnergyForces out;
  out.energy = network_pass<double>(w, p.hyper, rbf_consts(p), R, types, opt, &grad, nullptr);
  out.energy += prior_energy_grad(p.prior, R, &grad);
  if (!grad.allFinite()) throw NonFiniteError("cg potential: first non-finite tensor is forces");
  out.forces = -grad;
  return out;
}

Points3d cg_forces(const PotentialParams& p, const Points3d& R, std::span<const int> types) {
  return cg_energy_forces(p, R, types).forces;
}

Eigen::VectorXd energy_parameter_gradient(const PotentialParams& p, const Points3d& R, std::span<const int> types) {
  check_inputs(p, R, types);
  const Weights<double> w = unpack<double>(p.hyper, p.theta);
  Weights<double> g = zero_weights<double>(p.hyper);
  PassOptions opt;
  opt.want_param_grad = true;
  network_pass<double>(w, p.hyper, rbf_consts(p), R, types, opt, nullptr, &g);
  return pack(g, parameter_count(p.hyper));
}

namespace {

void check_frames(std::span<const CGFrame> frames, std::span<const int> types) {
  if (frames.empty()) throw Error("fm_loss: empty batch");
  for (const auto& f : frames) {
    if (!f.forces) throw Error("fm_loss: frame without reference forces");
    if (static_cast<std::size_t>(f.coords.rows()) != types.size())
      throw Error("fm_loss: frame bead count does not match the type list");
  }
}

}  // namespace

double fm_loss(const PotentialParams& p, std::span<const CGFrame> frames, std::span<const int> types) {
  check_frames(frames, types);
  std::vector<double> per(frames.size());
  parallel_for(frames.size(), [&](std::size_t t) {
    const auto& f = frames[t];
    per[t] = (cg_forces(p, f.coords, types) - *f.forces).squaredNorm() / (3.0 * static_cast<double>(f.coords.rows()));
  });
  double sum = 0.0;
  for (double x : per) sum += x;
  return sum / static_cast<double>(frames.size());
}

LossGradient fm_loss_and_grad(const PotentialParams& p, std::span<const CGFrame> frames, std::span<const int> types) {
  check_frames(frames, types);
  for (int t : types)
    if (t < 0 || t >= p.hyper.n_types) throw Error("fm_loss: bead type out of range");
  const std::size_t n = parameter_count(p.hyper);
  const Weights<double> wd = unpack<double>(p.hyper, p.theta);
  const Weights<Dual> wdual = unpack<Dual>(p.hyper, p.theta);
  const RbfConsts rk = rbf_consts(p);

  std::vector<double> loss(frames.size());
  std::vector<Eigen::VectorXd> grads(frames.size());
  parallel_for(frames.size(), [&](std::size_t t) {
    const auto& f = frames[t];
    const Eigen::Index M = f.coords.rows();
    // Forward + reverse in doubles for the predicted forces.
    Points3d gradR = Points3d::Zero(M, 3);
    PassOptions opt;
    opt.want_coord_grad = true;
    network_pass<double>(wd, p.hyper, rk, f.coords, types, opt, &gradR, nullptr);
    prior_energy_grad(p.prior, f.coords, &gradR);
    const Points3d v = -gradR - *f.forces;
    const double inv = 1.0 / (3.0 * static_cast<double>(M));
    loss[t] = v.squaredNorm() * inv;
    // Dual pass with coordinates seeded along v.
    Points<Dual> Rd(M, 3);
    for (Eigen::Index i = 0; i < M; ++i)
      for (int k = 0; k < 3; ++k) Rd(i, k) = Dual(f.coords(i, k), v(i, k));
    Weights<Dual> g = zero_weights<Dual>(p.hyper);
    PassOptions dopt;
    dopt.want_param_grad = true;
    dopt.check = false;
    network_pass<Dual>(wdual, p.hyper, rk, Rd, types, dopt, nullptr, &g);
    const Vec<Dual> flat = pack(g, n);
    Eigen::VectorXd gt(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < gt.size(); ++k) gt[k] = -2.0 * inv * flat[k].d;
    grads[t] = std::move(gt);
  });
  LossGradient out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out.loss += loss[t];
    out.grad += grads[t];
  }
  const double invT = 1.0 / static_cast<double>(frames.size());
  out.loss *= invT;
  out.grad *= invT;
  if (!std::isfinite(out.loss) || !out.grad.allFinite())
    throw NonFiniteError("fm_loss: non-finite loss or gradient");
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const PotentialParams& p) {
  p.validate();
  using binio::put_le;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("save_checkpoint: cannot open " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.hyper.n_types));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.hyper.n_blocks));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.hyper.width));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.hyper.n_rbf));
  put_le<double>(os, p.hyper.r_cut);
  put_le<double>(os, p.gamma);
  put_le<double>(os, p.hyper.energy_scale);
  for (Eigen::Index k = 0; k < p.mu.size(); ++k) put_le<double>(os, p.mu[k]);
  put_le<std::uint8_t>(os, p.prior.enabled ? 1 : 0);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.prior.bond_r0.size()));
  for (double x : p.prior.bond_r0) put_le<double>(os, x);
  for (double x : p.prior.bond_k) put_le<double>(os, x);
  put_le<double>(os, p.prior.rep_sigma);
  put_le<double>(os, p.prior.rep_epsilon);
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(p.theta.size()));
  for (Eigen::Index k = 0; k < p.theta.size(); ++k) put_le<double>(os, p.theta[k]);
  if (!os) throw CheckpointError("save_checkpoint: write failed for " + path.string());
}

namespace {

template <typename T>
T ck_get(std::istream& is, const char* what) {
  return binio::get_le<T, CheckpointError>(is, "checkpoint truncated while reading ", what);
}

}  // namespace

PotentialParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("load_checkpoint: cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError("load_checkpoint: " + path.string() + " is not an ALMDNET1 checkpoint");
  const auto version = ck_get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  PotentialParams p;
  p.hyper.n_types = static_cast<int>(ck_get<std::uint32_t>(is, "n_types"));
  p.hyper.n_blocks = static_cast<int>(ck_get<std::uint32_t>(is, "n_blocks"));
  p.hyper.width = static_cast<int>(ck_get<std::uint32_t>(is, "width"));
  p.hyper.n_rbf = static_cast<int>(ck_get<std::uint32_t>(is, "n_rbf"));
  p.hyper.r_cut = ck_get<double>(is, "r_cut");
  p.gamma = ck_get<double>(is, "gamma");
  p.hyper.rbf_gamma = p.gamma;
  p.hyper.energy_scale = ck_get<double>(is, "energy_scale");
  if (p.hyper.n_rbf > (1 << 20) || p.hyper.width > (1 << 16) || p.hyper.n_types > (1 << 24))
    throw CheckpointError("load_checkpoint: implausible network size");
  p.mu.resize(p.hyper.n_rbf);
  for (Eigen::Index k = 0; k < p.mu.size(); ++k) p.mu[k] = ck_get<double>(is, "rbf centres");
  p.prior.enabled = ck_get<std::uint8_t>(is, "prior flag") != 0;
  const auto nb = ck_get<std::uint32_t>(is, "prior bond count");
  if (nb > (1u << 24)) throw CheckpointError("load_checkpoint: implausible prior size");
  p.prior.bond_r0.resize(nb);
  p.prior.bond_k.resize(nb);
  for (auto& x : p.prior.bond_r0) x = ck_get<double>(is, "prior r0");
  for (auto& x : p.prior.bond_k) x = ck_get<double>(is, "prior k");
  p.prior.rep_sigma = ck_get<double>(is, "prior sigma");
  p.prior.rep_epsilon = ck_get<double>(is, "prior epsilon");
  const auto n = ck_get<std::uint64_t>(is, "parameter count");
  if (n != parameter_count(p.hyper)) throw CheckpointError("load_checkpoint: parameter count does not match header");
  p.theta.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < p.theta.size(); ++k) p.theta[k] = ck_get<double>(is, "weights");
  p.validate();
  return p;
}

}  // namespace almd
