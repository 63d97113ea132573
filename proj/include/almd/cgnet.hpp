#pragma once

// SchNet-style CG potential U(R) = energy_scale * sum_i readout(x_i) + U_prior(R).
//
// Features start from per-type embeddings and pass through n_blocks
// continuous-filter interaction blocks:
//   e_ij   = rbf(r_ij)                                  (G, cosine-switched)
//   W_ij   = W2 ssp(W1 e_ij)                            (F, no biases)
//   y_i    = sum_{j != i, r_ij < r_cut} (L x_j) o W_ij
//   x_i   += D2 ssp(D1 y_i + d1) + d2
// and the readout is a2 . ssp(A1 x_i + a1) + c. ssp(x) = ln(1 + e^x) - ln 2.
// The filter has no biases so W_ij, and with it every force term, goes to
// zero smoothly at the cutoff.
//
// Flat parameter layout (all matrices column-major), used by checkpoints:
//   embedding F x n_types
//   per block: L F x F, W1 F x G, W2 F x F, D1 F x F, d1 F, D2 F x F, d2 F
//   readout: A1 H x F, a1 H, a2 H, c 1         (H = F / 2)

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "almd/dual.hpp"
#include "almd/mathcore.hpp"
#include "almd/system.hpp"

namespace almd {

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

struct NetHyper {
  int n_types = 10;
  int n_blocks = 2;
  int width = 32;  // F
  int n_rbf = 24;  // G
  double r_cut = 1.2;          // nm
  double rbf_gamma = 0.0;      // nm^-2; 0 selects 1 / (2 spacing^2)
  double energy_scale = 1.0;   // kJ mol^-1 per network output unit
};

/// Fixed (not trained) prior: harmonic springs between consecutive beads and
/// an (sigma / r)^12 wall for beads at least two apart along the chain.
struct PriorParams {
  bool enabled = true;
  std::vector<double> bond_r0;  // nm, one per consecutive pair
  std::vector<double> bond_k;   // kJ mol^-1 nm^-2
  double rep_sigma = 0.0;       // nm
  double rep_epsilon = 0.0;     // kJ mol^-1
};

struct PotentialParams {
  NetHyper hyper;
  Eigen::VectorXd mu;  // RBF centres, nm
  double gamma = 0.0;  // RBF width parameter actually used
  PriorParams prior;
  Eigen::VectorXd theta;

  void validate() const;
};

std::size_t parameter_count(const NetHyper& h);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights (embeddings: fan_in 1),
/// zero biases, drawn in layout order from make_rng(seed, 0). The prior is
/// left disabled; see fit_prior.
PotentialParams init_potential(const NetHyper& h, std::uint64_t seed);

/// Bond springs by Boltzmann inversion of the consecutive-bead distance
/// distribution (r0 = mean, k = k_B T / variance); wall sigma = smallest
/// observed distance between beads two or more apart, epsilon = k_B T.
PriorParams fit_prior(std::span<const CGFrame> frames, double temperature);

std::vector<int> default_types(int n_beads);

/// Radial basis e_k(r), k = 0..G-1, times 0.5 (cos(pi r / r_cut) + 1);
/// identically zero for r >= r_cut.
Eigen::VectorXd rbf_expand(const PotentialParams& p, double r);
Eigen::VectorXd rbf_expand_derivative(const PotentialParams& p, double r);

double cg_energy(const PotentialParams& p, const Points3d& R, std::span<const int> types);

struct CgEnergyForces {
  double energy = 0.0;
  Points3d forces;
};

CgEnergyForces cg_energy_forces(const PotentialParams& p, const Points3d& R, std::span<const int> types);
Points3d cg_forces(const PotentialParams& p, const Points3d& R, std::span<const int> types);

/// Gradient of the network energy (the prior has no trained parameters) with
/// respect to theta.
Eigen::VectorXd energy_parameter_gradient(const PotentialParams& p, const Points3d& R,
                                          std::span<const int> types);

/// (1/T) sum_t (1/(3 M_t)) ||F_theta(R_t) - F_CG_t||^2.
double fm_loss(const PotentialParams& p, std::span<const CGFrame> frames, std::span<const int> types);

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Loss and d loss / d theta. Per frame, with v = F_theta - F_CG:
///   d/d theta ||v||^2 / (3M) = -(2 / 3M) d/d theta [v . grad_R U]
/// and the bracket's theta-gradient is the tangent of grad_theta U evaluated
/// in dual numbers with R seeded along v (forward over reverse). Frames are
/// processed on up to worker_count() threads and summed in frame order.
LossGradient fm_loss_and_grad(const PotentialParams& p, std::span<const CGFrame> frames,
                              std::span<const int> types);

// ---------------------------------------------------------------------------
// ALMDNET1 checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'A', 'L', 'M', 'D', 'N', 'E', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Layout (little endian): magic, u32 version, u32 n_types, u32 n_blocks,
/// u32 width, u32 n_rbf, f64 r_cut, f64 gamma, f64 energy_scale, G x f64 mu,
/// u8 prior_enabled, u32 n_bonds, n_bonds x f64 r0, n_bonds x f64 k,
/// f64 rep_sigma, f64 rep_epsilon, u64 n_params, n_params x f64 theta.
void save_checkpoint(const std::filesystem::path& path, const PotentialParams& p);
PotentialParams load_checkpoint(const std::filesystem::path& path);

}  // namespace almd
