#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "almd/mathcore.hpp"
#include "almd/system.hpp"

namespace almd {

struct SelectionConfig {
  int k = 16;
  double rmsd_cutoff = 0.8;   // nm, upper bound on min RMSD for a candidate
  double rmsd_floor = 0.0;    // nm, optional lower bound (0 disables)
  std::size_t training_subsample = 512;  // 0 = use every training frame
  int histogram_bins = 50;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Up to n indices of [0, total), drawn uniformly without replacement from
/// make_rng(seed, 0) and sorted; every index when n is 0 or n >= total.
std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t n, std::uint64_t seed);

/// Smallest Kabsch RMSD from R to the listed training frames (all of them if
/// `subset` is empty).
double min_rmsd_to_set(const Points3d& R, std::span<const CGFrame> training,
                       std::span<const std::size_t> subset = {});

struct SelectionReport {
  std::vector<double> min_rmsd;         // per trajectory frame; NaN for non-finite frames
  std::vector<std::size_t> selected;    // frame indices, descending min_rmsd
  std::vector<double> selected_rmsd;
  std::size_t n_candidates = 0;
  std::size_t n_anomalous = 0;
  std::size_t n_cutoff_excluded = 0;    // non-anomalous frames outside [floor, cutoff]
  Histogram histogram;                  // of every finite min_rmsd
  bool nothing_to_select = false;
};

/// Candidates are unflagged frames with floor <= min_rmsd <= cutoff; the k
/// largest are selected, ties going to the earlier frame time. `anomalous` may
/// be empty (no flags). Distances are computed in parallel over frames.
SelectionReport select_frames(std::span<const CGFrame> traj, const std::vector<bool>& anomalous,
                              std::span<const CGFrame> training, const SelectionConfig& cfg);

/// Histogram of the Kabsch RMSD of each frame to a fixed reference over
/// [lo, hi]; hi <= lo picks [0, max RMSD].
Histogram rmsd_histogram_vs_reference(std::span<const CGFrame> traj, const Points3d& reference,
                                      std::size_t bins, double lo = 0.0, double hi = 0.0);

}  // namespace almd
