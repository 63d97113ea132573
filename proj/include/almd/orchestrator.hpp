#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "almd/config.hpp"

namespace almd {

/// Child seed for one purpose: folds substream_seed over the path.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

/// The toy chain, its mapping and the minimized starting structure.
struct ToySetup {
  Topology top;
  MappingOperator op;
  Points3d minimized;
  CgTopology cg;
};
ToySetup make_toy_setup(const LoopConfig& cfg);

nlohmann::ordered_json toy_constants_json();

/// Short oracle run from the minimized structure, mapped to CG; every frame
/// has provenance (0, initial). The AA frames are returned through `aa_out`.
Dataset make_initial_dataset(const LoopConfig& cfg, const ToySetup& s, std::vector<AAFrame>* aa_out = nullptr);

/// Oracle query from a backmapped seed: `equilibration_steps` unsaved steps
/// (noise from a substream of cfg.rng_seed), then the production run of cfg
/// continuing with the equilibrated velocities.
std::vector<AAFrame> oracle_query(const Topology& top, const Points3d& seed, const OracleConfig& cfg,
                                  long equilibration_steps);

/// Long oracle run used as ground truth, cached as
/// <cache_dir>/reference-<hash>.trj. The hash covers everything the run
/// depends on.
std::string reference_hash(const LoopConfig& cfg);
std::vector<CGFrame> reference_trajectory(const LoopConfig& cfg, const ToySetup& s, bool* from_cache = nullptr);

/// Runs n_walkers CG simulations with the given per-walker step budget;
/// after an anomaly a walker restarts from its start frame.
struct WalkerRun {
  std::vector<CGFrame> frames;
  std::vector<bool> anomalous;
  int segments = 0;
  int exploded = 0;
  int imploded = 0;
  long steps = 0;
  double mean_kinetic_temperature = 0.0;
};
std::vector<WalkerRun> run_walkers(const PotentialParams& p, const CgTopology& cg, std::span<const Points3d> starts,
                                   const SimConfig& sim, std::uint64_t seed);

struct LoopOptions {
  bool resume = false;
  std::function<void(const std::string&)> log;
};

enum class LoopStatus { completed, nothing_to_select, failed };
std::string to_string(LoopStatus s);

struct LoopOutcome {
  LoopStatus status = LoopStatus::completed;
  nlohmann::ordered_json manifest;
};

/// The active-learning loop. Round 0 trains the base model on the initial
/// dataset; each later round selects from the previous round's simulation,
/// backmaps, queries the oracle, projects, appends, retrains, simulates and
/// benchmarks. The manifest is rewritten after every round; a failing stage
/// is recorded with its round and stage before the error propagates.
LoopOutcome run_active_learning(const LoopConfig& cfg, const LoopOptions& opt = {});

/// Manifest with the wall-clock fields removed, for determinism checks.
nlohmann::ordered_json strip_timings(nlohmann::ordered_json manifest);

}  // namespace almd
