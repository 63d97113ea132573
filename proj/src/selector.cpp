#include "almd/selector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "almd/parallel.hpp"
#include "almd/rng.hpp"

namespace almd {

void SelectionConfig::validate() const {
  if (k < 1) throw Error("selection: k must be at least 1");
  if (!(rmsd_cutoff > 0.0)) throw Error("selection: rmsd_cutoff must be positive");
  if (rmsd_floor < 0.0 || rmsd_floor >= rmsd_cutoff)
    throw Error("selection: rmsd_floor must lie in [0, rmsd_cutoff)");
  if (histogram_bins < 1) throw Error("selection: histogram_bins must be at least 1");
}

std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n == 0 || n >= total) return idx;
  Rng rng = make_rng(seed, 0);
  // Partial Fisher-Yates: the first n slots end up a uniform sample.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double min_rmsd_to_set(const Points3d& R, std::span<const CGFrame> training, std::span<const std::size_t> subset) {
  if (training.empty()) throw Error("min_rmsd_to_set: training set is empty");
  double best = std::numeric_limits<double>::infinity();
  auto visit = [&](const CGFrame& f) {
    if (f.coords.rows() != R.rows()) throw Error("min_rmsd_to_set: bead count mismatch");
    best = std::min(best, rmsd(R, f.coords));
  };
  if (subset.empty()) {
    for (const auto& f : training) visit(f);
  } else {
    for (std::size_t i : subset) visit(training[i]);
  }
  return best;
}

namespace {

Histogram finite_histogram(const std::vector<double>& values, std::size_t bins, double lo, double hi) {
  std::vector<double> finite;
  for (double v : values)
    if (std::isfinite(v)) finite.push_back(v);
  if (!(hi > lo)) {
    lo = 0.0;
    hi = finite.empty() ? 1.0 : *std::max_element(finite.begin(), finite.end());
    if (!(hi > lo)) hi = 1e-6;
  }
  return histogram(finite, bins, lo, hi);
}

}  // namespace

SelectionReport select_frames(std::span<const CGFrame> traj, const std::vector<bool>& anomalous,
                              std::span<const CGFrame> training, const SelectionConfig& cfg) {
  cfg.validate();
  if (traj.empty()) throw Error("select_frames: trajectory is empty");
  if (!anomalous.empty() && anomalous.size() != traj.size())
    throw Error("select_frames: anomaly flags do not match the trajectory");
  if (training.empty()) throw Error("select_frames: training set is empty");
  const auto subset = subsample_indices(training.size(), cfg.training_subsample, cfg.rng_seed);

  SelectionReport rep;
  rep.min_rmsd.assign(traj.size(), std::numeric_limits<double>::quiet_NaN());
  parallel_for(traj.size(), [&](std::size_t i) {
    if (traj[i].coords.allFinite()) rep.min_rmsd[i] = min_rmsd_to_set(traj[i].coords, training, subset);
  });

  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double d = rep.min_rmsd[i];
    if ((!anomalous.empty() && anomalous[i]) || !std::isfinite(d)) {
      ++rep.n_anomalous;
    } else if (d > cfg.rmsd_cutoff || d < cfg.rmsd_floor) {
      ++rep.n_cutoff_excluded;
    } else {
      cand.push_back(i);
    }
  }
  rep.n_candidates = cand.size();
  std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
    if (rep.min_rmsd[a] != rep.min_rmsd[b]) return rep.min_rmsd[a] > rep.min_rmsd[b];
    return traj[a].time < traj[b].time;
  });
  cand.resize(std::min(cand.size(), static_cast<std::size_t>(cfg.k)));
  rep.selected = cand;
  for (std::size_t i : cand) rep.selected_rmsd.push_back(rep.min_rmsd[i]);
  rep.nothing_to_select = cand.empty();
  rep.histogram = finite_histogram(rep.min_rmsd, static_cast<std::size_t>(cfg.histogram_bins), 0.0, 0.0);
  return rep;
}

Histogram rmsd_histogram_vs_reference(std::span<const CGFrame> traj, const Points3d& reference, std::size_t bins,
                                      double lo, double hi) {
  std::vector<double> d(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (traj[i].coords.rows() != reference.rows())
      throw Error("rmsd_histogram_vs_reference: bead count mismatch");
    d[i] = traj[i].coords.allFinite() ? rmsd(traj[i].coords, reference) : std::numeric_limits<double>::quiet_NaN();
  }
  return finite_histogram(d, bins, lo, hi);
}

}  // namespace almd
