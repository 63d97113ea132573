#include "almd/cgsim.hpp"

#include <cmath>

#include "almd/langevin.hpp"
#include "almd/parallel.hpp"
#include "almd/rng.hpp"

namespace almd {

void AnomalyThresholds::validate() const {
  if (!(max_bond_stretch_factor > 0.0) || !(min_pair_distance > 0.0) || !(max_displacement > 0.0))
    throw Error("anomaly thresholds must be positive");
}

void SimConfig::validate() const {
  if (!(timestep > 0.0)) throw Error("sim config: timestep must be positive");
  if (!(temperature > 0.0)) throw Error("sim config: temperature must be positive");
  if (friction < 0.0) throw Error("sim config: friction must be non-negative");
  if (n_steps < 0) throw Error("sim config: n_steps must be non-negative");
  if (save_interval < 1) throw Error("sim config: save_interval must be at least 1");
  thresholds.validate();
}

std::string to_string(SimStatus s) {
  switch (s) {
    case SimStatus::completed: return "completed";
    case SimStatus::exploded: return "exploded";
    case SimStatus::imploded: return "imploded";
  }
  return "unknown";
}

CgTopology make_cg_topology(const Topology& top, const MappingOperator& op, const Points3d& reference) {
  CgTopology cg;
  const Eigen::VectorXd m = top.masses();
  const auto members = top.bead_members();
  cg.masses.resize(static_cast<Eigen::Index>(members.size()));
  for (std::size_t b = 0; b < members.size(); ++b) {
    double s = 0.0;
    for (int a : members[b]) s += m[a];
    cg.masses[static_cast<Eigen::Index>(b)] = s;
  }
  const Points3d R = map_coords(op, reference);
  for (Eigen::Index b = 0; b + 1 < R.rows(); ++b) cg.nominal_spacing.push_back((R.row(b + 1) - R.row(b)).norm());
  cg.types = default_types(static_cast<int>(R.rows()));
  return cg;
}

SimStatus detect_anomaly(const Points3d& R, const Points3d* prev, const CgTopology& cg,
                         const AnomalyThresholds& th) {
  if (!R.allFinite()) return SimStatus::exploded;
  const Eigen::Index M = R.rows();
  for (Eigen::Index b = 0; b + 1 < M; ++b) {
    const double limit = th.max_bond_stretch_factor * cg.nominal_spacing.at(static_cast<std::size_t>(b));
    if ((R.row(b + 1) - R.row(b)).norm() > limit) return SimStatus::exploded;
  }
  if (prev && (R - *prev).rowwise().norm().maxCoeff() > th.max_displacement) return SimStatus::exploded;
  const double min2 = th.min_pair_distance * th.min_pair_distance;
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = i + 1; j < M; ++j)
      if ((R.row(i) - R.row(j)).squaredNorm() < min2) return SimStatus::imploded;
  return SimStatus::completed;
}

SimResult simulate_cg(const CgForceFn& force, const CgTopology& cg, const Points3d& R0, const SimConfig& cfg,
                      std::uint64_t stream) {
  cfg.validate();
  if (R0.rows() != cg.masses.size() || cg.nominal_spacing.size() + 1 != static_cast<std::size_t>(R0.rows()))
    throw Error("simulate_cg: start frame does not match the CG topology");
  SimResult res;
  BaoabIntegrator integ(cg.masses, {cfg.timestep, cfg.friction, cfg.temperature}, make_rng(cfg.rng_seed, stream));
  Points3d x = R0, f(R0.rows(), 3), prev;
  double temp_sum = 0.0;

  auto halt = [&](SimStatus s, long step, const std::string& why, bool have_forces) {
    res.status = s;
    res.stop_step = step;
    res.message = to_string(s) + " at step " + std::to_string(step) + (why.empty() ? "" : ": " + why);
    CGFrame fr{static_cast<double>(step) * cfg.timestep, x, std::nullopt};
    if (have_forces && f.allFinite()) fr.forces = f;
    res.frames.push_back(std::move(fr));
    res.anomalous.push_back(true);
    if (step > 0) res.mean_kinetic_temperature = temp_sum / static_cast<double>(step);
    return res;
  };
  auto eval = [&](const Points3d& at, Points3d& out) -> std::string {
    try {
      const double e = force(at, out);
      if (!std::isfinite(e) || !out.allFinite()) return "non-finite force";
    } catch (const NonFiniteError& e) {
      return e.what();
    } catch (const Error& e) {
      return e.what();
    }
    return {};
  };

  if (const SimStatus s = detect_anomaly(x, nullptr, cg, cfg.thresholds); s != SimStatus::completed)
    return halt(s, 0, "", false);
  if (const std::string err = eval(x, f); !err.empty()) return halt(SimStatus::exploded, 0, err, false);
  Points3d v = integ.maxwell_boltzmann_velocities();

  for (long step = 1; step <= cfg.n_steps; ++step) {
    prev = x;
    std::string err;
    integ.step(x, v, f, [&](const Points3d& at, Points3d& out) {
      err = eval(at, out);
      return 0.0;
    });
    if (!err.empty()) return halt(SimStatus::exploded, step, err, false);
    temp_sum += integ.kinetic_temperature(v);
    if (const SimStatus s = detect_anomaly(x, &prev, cg, cfg.thresholds); s != SimStatus::completed)
      return halt(s, step, "", true);
    if (step % cfg.save_interval == 0) {
      res.frames.push_back(CGFrame{static_cast<double>(step) * cfg.timestep, x, f});
      res.anomalous.push_back(false);
    }
  }
  res.stop_step = -1;
  if (cfg.n_steps > 0) res.mean_kinetic_temperature = temp_sum / static_cast<double>(cfg.n_steps);
  return res;
}

SimResult simulate_cg(const PotentialParams& p, const CgTopology& cg, const Points3d& R0, const SimConfig& cfg,
                      std::uint64_t stream) {
  p.validate();
  const CgForceFn fn = [&](const Points3d& R, Points3d& out) {
    CgEnergyForces ef = cg_energy_forces(p, R, cg.types);
    out = std::move(ef.forces);
    return ef.energy;
  };
  return simulate_cg(fn, cg, R0, cfg, stream);
}

std::vector<SimResult> simulate_cg_batch(const PotentialParams& p, const CgTopology& cg,
                                         std::span<const Points3d> starts, const SimConfig& cfg) {
  std::vector<SimResult> out(starts.size());
  parallel_for(starts.size(), [&](std::size_t k) { out[k] = simulate_cg(p, cg, starts[k], cfg, k); });
  return out;
}

}  // namespace almd
