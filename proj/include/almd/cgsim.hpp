#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "almd/bridge.hpp"
#include "almd/cgnet.hpp"

namespace almd {

struct AnomalyThresholds {
  double max_bond_stretch_factor = 3.0;  // x nominal consecutive-bead spacing
  double min_pair_distance = 0.05;       // nm
  double max_displacement = 1.0;         // nm per step, any bead

  void validate() const;
};

/// What the CG simulator needs to know about the chain.
struct CgTopology {
  Eigen::VectorXd masses;               // amu
  std::vector<double> nominal_spacing;  // nm, consecutive beads
  std::vector<int> types;
};

/// Bead masses are summed member masses (for C-alpha mapping this is the
/// residue mass); nominal spacings are the bead distances of `reference`
/// (typically the minimized all-atom structure) after mapping.
CgTopology make_cg_topology(const Topology& top, const MappingOperator& op, const Points3d& reference);

enum class SimStatus { completed, exploded, imploded };
std::string to_string(SimStatus s);

/// Exploded if a consecutive-bead distance exceeds the stretch factor times
/// its nominal spacing, or any bead moved more than max_displacement since
/// `prev` (skipped when prev is null). Imploded if any pair is closer than
/// min_pair_distance. Exploded wins when both fire; completed means no anomaly.
SimStatus detect_anomaly(const Points3d& R, const Points3d* prev, const CgTopology& cg,
                         const AnomalyThresholds& th);

struct SimConfig {
  double temperature = 300.0;  // K
  double friction = 1.0;       // ps^-1
  double timestep = 0.002;     // ps
  long n_steps = 100000;
  long save_interval = 100;
  std::uint64_t rng_seed = 0;
  AnomalyThresholds thresholds;

  void validate() const;
};

struct SimResult {
  std::vector<CGFrame> frames;  // every save_interval steps, plus the anomalous frame if any
  std::vector<bool> anomalous;  // parallel to frames
  SimStatus status = SimStatus::completed;
  long stop_step = -1;          // step at which the anomaly fired
  std::string message;
  double mean_kinetic_temperature = 0.0;  // over the steps actually taken
};

/// Force callback: overwrite forces at R, return the potential energy.
using CgForceFn = std::function<double(const Points3d& R, Points3d& forces)>;

/// BAOAB Langevin in CG space. Random numbers come from
/// make_rng(cfg.rng_seed, stream). A non-finite force or position ends the run
/// as exploded at that step rather than throwing. The start frame is checked
/// (step 0) but only saved if it is anomalous.
SimResult simulate_cg(const CgForceFn& force, const CgTopology& cg, const Points3d& R0, const SimConfig& cfg,
                      std::uint64_t stream = 0);
SimResult simulate_cg(const PotentialParams& p, const CgTopology& cg, const Points3d& R0, const SimConfig& cfg,
                      std::uint64_t stream = 0);

/// Independent runs from each start, run k on substream k, in parallel.
std::vector<SimResult> simulate_cg_batch(const PotentialParams& p, const CgTopology& cg,
                                         std::span<const Points3d> starts, const SimConfig& cfg);

}  // namespace almd
