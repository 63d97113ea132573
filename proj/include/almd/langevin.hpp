#pragma once

#include <cmath>
#include <random>
#include <utility>

#include "almd/mathcore.hpp"
#include "almd/rng.hpp"
#include "almd/system.hpp"

namespace almd {

struct LangevinParams {
  double timestep = 0.002;     // ps
  double friction = 1.0;       // ps^-1
  double temperature = 300.0;  // K
};

/// BAOAB splitting of underdamped Langevin dynamics:
///   B: v += dt/2 f/m,  A: x += dt/2 v,  O: v = c1 v + c2 xi / sqrt(m),
///   A: x += dt/2 v,    force update,   B: v += dt/2 f/m
/// with c1 = exp(-gamma dt) and c2 = sqrt((1 - c1^2) k_B T). With gamma = 0
/// the scheme reduces to velocity Verlet.
class BaoabIntegrator {
 public:
  BaoabIntegrator(Eigen::VectorXd masses, LangevinParams params, Rng rng)
      : masses_(std::move(masses)), params_(params), rng_(std::move(rng)) {
    if (!(params_.timestep > 0.0)) throw Error("langevin: timestep must be positive");
    if (params_.friction < 0.0) throw Error("langevin: friction must be non-negative");
    if (!(params_.temperature > 0.0)) throw Error("langevin: temperature must be positive");
    inv_mass_ = masses_.cwiseInverse();
    c1_ = std::exp(-params_.friction * params_.timestep);
    c2_ = std::sqrt((1.0 - c1_ * c1_) * kBoltzmann * params_.temperature);
  }

  Points3d maxwell_boltzmann_velocities() {
    Points3d v(masses_.size(), 3);
    const double kT = kBoltzmann * params_.temperature;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (int k = 0; k < 3; ++k) v(i, k) = std::sqrt(kT * inv_mass_(i)) * normal_(rng_);
    return v;
  }

  /// Advances one step. `force_fn(x, f)` overwrites f with the forces at x and
  /// returns the potential energy; its return value is passed through.
  template <typename ForceFn>
  auto step(Points3d& x, Points3d& v, Points3d& f, ForceFn&& force_fn) {
    const double half = 0.5 * params_.timestep;
    v += half * (inv_mass_.asDiagonal() * f);
    x += half * v;
    if (params_.friction > 0.0) {
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double s = c2_ * std::sqrt(inv_mass_(i));
        for (int k = 0; k < 3; ++k) v(i, k) = c1_ * v(i, k) + s * normal_(rng_);
      }
    }
    x += half * v;
    auto result = force_fn(x, f);
    v += half * (inv_mass_.asDiagonal() * f);
    return result;
  }

  double kinetic_energy(const Points3d& v) const {
    return 0.5 * (masses_.asDiagonal() * v.cwiseAbs2()).sum();
  }

  /// 2 KE / (N_dof k_B) with N_dof = 3N; the thermostat acts on every degree
  /// of freedom, including the centre of mass.
  double kinetic_temperature(const Points3d& v) const {
    return 2.0 * kinetic_energy(v) / (3.0 * static_cast<double>(v.rows()) * kBoltzmann);
  }

  const LangevinParams& params() const { return params_; }

 private:
  Eigen::VectorXd masses_;
  Eigen::VectorXd inv_mass_;
  LangevinParams params_;
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double c1_ = 1.0;
  double c2_ = 0.0;
};

}  // namespace almd
