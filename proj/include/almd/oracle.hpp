#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "almd/langevin.hpp"
#include "almd/system.hpp"

namespace almd {

/// Harmonic tethers 0.5 k |r_a - target_a|^2 on selected atoms.
struct PositionRestraints {
  std::vector<int> atoms;
  Points3d targets;
  double k = 0.0;  // kJ mol^-1 nm^-2
};

struct EnergyForces {
  double energy = 0.0;  // kJ mol^-1
  Points3d forces;      // kJ mol^-1 nm^-1
};

/// Classical force field: harmonic bonds and angles, periodic and double-well
/// torsions, Lennard-Jones between non-excluded pairs (Lorentz-Berthelot
/// mixing, no cutoff). Throws Error naming the pair if two atoms overlap.
EnergyForces aa_energy_forces(const Topology& top, const Points3d& r,
                              const PositionRestraints* restraints = nullptr);

struct MinimizeResult {
  Points3d coords;
  double energy = 0.0;
  double max_force = 0.0;  // largest per-atom force norm at exit
  int iterations = 0;
  bool converged = false;  // true: force tolerance met; false: iteration cap
  std::vector<double> energy_history;  // energy after each accepted step, starting value first
};

/// L-BFGS descent with a backtracking (Armijo) line search and a cap on the
/// per-atom displacement. Every accepted step lowers the energy.
MinimizeResult minimize(const Topology& top, const Points3d& r, int max_iters, double force_tol,
                        const PositionRestraints* restraints = nullptr);

struct OracleConfig {
  double temperature = 300.0;  // K
  double friction = 1.0;       // ps^-1
  double timestep = 0.002;     // ps
  long n_steps = 10000;
  long save_interval = 1000;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Called after every step with (step index, coords, velocities, potential
/// energy, integrator).
using OracleObserver =
    std::function<void(long, const Points3d&, const Points3d&, double, const BaoabIntegrator&)>;

/// BAOAB Langevin trajectory from r0. Velocities are drawn from the
/// Maxwell-Boltzmann distribution unless `v0` is given. Frames are saved every
/// save_interval steps (the start frame is not saved) and carry the forces at
/// the saved coordinates. Throws Error with the step index if coordinates turn
/// non-finite.
std::vector<AAFrame> run_langevin(const Topology& top, const Points3d& r0, const OracleConfig& cfg,
                                  const std::optional<Points3d>& v0 = std::nullopt,
                                  const OracleObserver& observer = {}, double start_time = 0.0);

}  // namespace almd
