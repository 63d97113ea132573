#include "almd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace almd {

namespace {

struct TorsionGeometry {
  double phi;
  Eigen::Vector3d gi, gj, gk, gl;  // d phi / d r_x
};

// phi = atan2(|b2| b1 . (b2 x b3), (b1 x b2) . (b2 x b3)) with b1 = rj - ri,
// b2 = rk - rj, b3 = rl - rk. Gradient from Blondel & Karplus (1996).
TorsionGeometry torsion(const Eigen::Vector3d& ri, const Eigen::Vector3d& rj, const Eigen::Vector3d& rk,
                        const Eigen::Vector3d& rl) {
  const Eigen::Vector3d F = ri - rj;
  const Eigen::Vector3d G = rj - rk;
  const Eigen::Vector3d H = rl - rk;
  const Eigen::Vector3d A = F.cross(G);
  const Eigen::Vector3d B = H.cross(G);
  const double a2 = A.squaredNorm();
  const double b2 = B.squaredNorm();
  const double g = G.norm();
  if (a2 < 1e-24 || b2 < 1e-24 || g < 1e-12) throw Error("aa_energy_forces: collinear torsion atoms");

  TorsionGeometry t;
  t.phi = dihedral<double>(ri, rj, rk, rl);
  const double fg = F.dot(G), hg = H.dot(G);
  t.gi = -g / a2 * A;
  t.gl = g / b2 * B;
  t.gj = g / a2 * A + fg / (a2 * g) * A - hg / (b2 * g) * B;
  t.gk = -g / b2 * B - fg / (a2 * g) * A + hg / (b2 * g) * B;
  return t;
}

}  // namespace

EnergyForces aa_energy_forces(const Topology& top, const Points3d& r, const PositionRestraints* restraints) {
  const int n = top.n_atoms();
  if (r.rows() != n) throw Error("aa_energy_forces: coordinate count does not match topology");
  if (!r.allFinite()) throw Error("aa_energy_forces: non-finite coordinates");

  EnergyForces out;
  out.forces = Points3d::Zero(n, 3);
  auto& f = out.forces;
  double e_bond = 0, e_angle = 0, e_torsion = 0, e_lj = 0, e_restraint = 0;

  for (const auto& b : top.bonds) {
    const Eigen::Vector3d d = r.row(b.i) - r.row(b.j);
    const double dist = d.norm();
    const double dr = dist - b.r0;
    e_bond += 0.5 * b.k * dr * dr;
    const Eigen::Vector3d fi = -b.k * dr / dist * d;
    f.row(b.i) += fi.transpose();
    f.row(b.j) -= fi.transpose();
  }

  for (const auto& a : top.angles) {
    const Eigen::Vector3d u = r.row(a.i) - r.row(a.j);
    const Eigen::Vector3d v = r.row(a.k) - r.row(a.j);
    const double nu = u.norm(), nv = v.norm();
    const double c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
    const double theta = std::acos(c);
    const double s = std::max(std::sqrt(1.0 - c * c), 1e-10);
    const double dtheta = theta - a.theta0;
    e_angle += 0.5 * a.k_theta * dtheta * dtheta;
    // dtheta/du = -(v/(|u||v|) - c u/|u|^2) / sin(theta)
    const Eigen::Vector3d gu = -(v / (nu * nv) - c * u / (nu * nu)) / s;
    const Eigen::Vector3d gv = -(u / (nu * nv) - c * v / (nv * nv)) / s;
    const double de = a.k_theta * dtheta;
    f.row(a.i) -= de * gu.transpose();
    f.row(a.k) -= de * gv.transpose();
    f.row(a.j) += de * (gu + gv).transpose();
  }

  for (const auto& d : top.dihedrals) {
    const TorsionGeometry t = torsion(r.row(d.i), r.row(d.j), r.row(d.k), r.row(d.l));
    double e = 0.0, de = 0.0;
    for (const auto& p : d.periodic) {
      e += p.k_phi * (1.0 + std::cos(p.n * t.phi - p.phi0));
      de += -p.k_phi * p.n * std::sin(p.n * t.phi - p.phi0);
    }
    if (d.double_well) {
      const double dc = std::cos(t.phi) - d.double_well->c;
      e += d.double_well->k_w * dc * dc;
      de += -2.0 * d.double_well->k_w * dc * std::sin(t.phi);
    }
    e_torsion += e;
    f.row(d.i) -= de * t.gi.transpose();
    f.row(d.j) -= de * t.gj.transpose();
    f.row(d.k) -= de * t.gk.transpose();
    f.row(d.l) -= de * t.gl.transpose();
  }

  for (int i = 0; i < n; ++i) {
    const auto& ti = top.lj_types[static_cast<std::size_t>(top.atoms[static_cast<std::size_t>(i)].type_id)];
    for (int j = i + 1; j < n; ++j) {
      const Eigen::Vector3d d = r.row(i) - r.row(j);
      const double r2 = d.squaredNorm();
      if (r2 < 1e-12)
        throw Error("aa_energy_forces: atoms " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
      if (top.is_excluded(i, j)) continue;
      const auto& tj = top.lj_types[static_cast<std::size_t>(top.atoms[static_cast<std::size_t>(j)].type_id)];
      const double sigma = 0.5 * (ti.sigma + tj.sigma);
      const double eps = std::sqrt(ti.epsilon * tj.epsilon);
      const double s2 = sigma * sigma / r2;
      const double s6 = s2 * s2 * s2;
      const double s12 = s6 * s6;
      e_lj += 4.0 * eps * (s12 - s6);
      // -dE/dr * (d / r) = 24 eps (2 s12 - s6) / r^2 * d
      const Eigen::Vector3d fi = 24.0 * eps * (2.0 * s12 - s6) / r2 * d;
      f.row(i) += fi.transpose();
      f.row(j) -= fi.transpose();
    }
  }

  if (restraints) {
    for (std::size_t a = 0; a < restraints->atoms.size(); ++a) {
      const int i = restraints->atoms[a];
      const Eigen::Vector3d d = r.row(i) - restraints->targets.row(static_cast<Eigen::Index>(a));
      e_restraint += 0.5 * restraints->k * d.squaredNorm();
      f.row(i) -= restraints->k * d.transpose();
    }
  }

  out.energy = e_bond + e_angle + e_torsion + e_lj + e_restraint;
  return out;
}

MinimizeResult minimize(const Topology& top, const Points3d& r, int max_iters, double force_tol,
                        const PositionRestraints* restraints) {
  MinimizeResult res;
  res.coords = r;
  EnergyForces ef = aa_energy_forces(top, r, restraints);
  if (!std::isfinite(ef.energy)) throw Error("minimize: non-finite energy at iteration 0");
  res.energy = ef.energy;
  res.energy_history.push_back(res.energy);

  constexpr double kArmijo = 1e-4;
  constexpr double kMaxDisplacement = 0.02;  // nm per atom per step
  constexpr std::size_t kHistory = 8;
  // Limited-memory BFGS direction (two-loop recursion over the last kHistory
  // steps); steepest descent when the history is empty or the direction is
  // not downhill. Backtracking halves the step until Armijo holds.
  std::vector<Eigen::VectorXd> s_hist, y_hist;
  std::vector<double> rho_hist;
  double sd_step = 1e-5;
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    res.max_force = ef.forces.rowwise().norm().maxCoeff();
    if (res.max_force <= force_tol) {
      res.converged = true;
      return res;
    }
    const Eigen::Map<const Eigen::VectorXd> g0(ef.forces.data(), ef.forces.size());  // = -gradient
    Eigen::VectorXd q = g0;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t h = s_hist.size(); h-- > 0;) {
      alpha[h] = rho_hist[h] * s_hist[h].dot(q);
      q -= alpha[h] * y_hist[h];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    else q *= sd_step;
    for (std::size_t h = 0; h < s_hist.size(); ++h) {
      const double beta = rho_hist[h] * y_hist[h].dot(q);
      q += (alpha[h] - beta) * s_hist[h];
    }
    double slope = q.dot(g0);  // directional decrease rate, must be > 0
    if (!(slope > 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      q = sd_step * g0;
      slope = q.dot(g0);
    }
    const Points3d dir = Eigen::Map<const Points3d>(q.data(), ef.forces.rows(), 3);
    double t = std::min(1.0, kMaxDisplacement / dir.rowwise().norm().maxCoeff());
    bool accepted = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries, t *= 0.5) {
      const Points3d trial = res.coords + t * dir;
      EnergyForces trial_ef;
      try {
        trial_ef = aa_energy_forces(top, trial, restraints);
      } catch (const Error&) {
        continue;
      }
      if (!std::isfinite(trial_ef.energy))
        throw Error("minimize: non-finite energy at iteration " + std::to_string(res.iterations));
      if (trial_ef.energy <= res.energy - kArmijo * t * slope) {
        const Eigen::Map<const Eigen::VectorXd> g1(trial_ef.forces.data(), trial_ef.forces.size());
        Eigen::VectorXd sv = t * q;
        Eigen::VectorXd yv = g0 - g1;  // gradient difference
        const double sy = sv.dot(yv);
        if (sy > 1e-12 * sv.norm() * yv.norm()) {
          if (s_hist.size() == kHistory) {
            s_hist.erase(s_hist.begin());
            y_hist.erase(y_hist.begin());
            rho_hist.erase(rho_hist.begin());
          }
          s_hist.push_back(std::move(sv));
          y_hist.push_back(std::move(yv));
          rho_hist.push_back(1.0 / sy);
        }
        res.coords = trial;
        res.energy = trial_ef.energy;
        ef = std::move(trial_ef);
        res.energy_history.push_back(res.energy);
        accepted = true;
      }
    }
    if (!accepted) {
      if (s_hist.empty()) break;  // steepest descent failed too: at numerical precision
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
  }
  res.max_force = ef.forces.rowwise().norm().maxCoeff();
  res.converged = res.max_force <= force_tol;
  return res;
}

void OracleConfig::validate() const {
  if (!(timestep > 0.0)) throw Error("oracle config: timestep must be positive");
  if (friction < 0.0) throw Error("oracle config: friction must be non-negative");
  if (!(temperature > 0.0)) throw Error("oracle config: temperature must be positive");
  if (save_interval < 1) throw Error("oracle config: save_interval must be at least 1");
  if (n_steps < 0) throw Error("oracle config: n_steps must be non-negative");
}

std::vector<AAFrame> run_langevin(const Topology& top, const Points3d& r0, const OracleConfig& cfg,
                                  const std::optional<Points3d>& v0, const OracleObserver& observer,
                                  double start_time) {
  cfg.validate();
  BaoabIntegrator integrator(top.masses(), {cfg.timestep, cfg.friction, cfg.temperature},
                             make_rng(cfg.rng_seed, 0));
  Points3d x = r0;
  Points3d v = v0 ? *v0 : integrator.maxwell_boltzmann_velocities();
  EnergyForces ef = aa_energy_forces(top, x);
  Points3d f = ef.forces;

  auto force_fn = [&top](const Points3d& pos, Points3d& out) {
    EnergyForces e = aa_energy_forces(top, pos);
    out = std::move(e.forces);
    return e.energy;
  };

  std::vector<AAFrame> frames;
  frames.reserve(static_cast<std::size_t>(cfg.n_steps / cfg.save_interval));
  for (long step = 1; step <= cfg.n_steps; ++step) {
    double energy;
    try {
      energy = integrator.step(x, v, f, force_fn);
    } catch (const Error& e) {
      throw Error("run_langevin: step " + std::to_string(step) + ": " + e.what() +
                  " (timestep too large?)");
    }
    if (!x.allFinite() || !v.allFinite())
      throw Error("run_langevin: non-finite coordinates at step " + std::to_string(step) +
                  " (timestep too large?)");
    if (observer) observer(step, x, v, energy, integrator);
    if (step % cfg.save_interval == 0)
      frames.push_back(AAFrame{start_time + static_cast<double>(step) * cfg.timestep, x, f});
  }
  return frames;
}

}  // namespace almd
