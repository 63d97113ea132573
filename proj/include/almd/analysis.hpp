#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "almd/mathcore.hpp"
#include "almd/system.hpp"

namespace almd {

/// All pairwise bead distances per frame, pairs (i, j), i < j, in row-major
/// order: T x M(M-1)/2.
Eigen::MatrixXd featurize(std::span<const CGFrame> traj);

struct TicaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd c0, ctau;
  int lag = 1;
  Eigen::VectorXd eigenvalues;  // descending, all of them
  Eigen::MatrixXd projection;   // top `dims` eigenvectors, C0-orthonormal columns

  int dims() const { return static_cast<int>(projection.cols()); }
};

/// Symmetrized estimator over the lag window: with X0 = rows [0, T - lag) and
/// Xt = rows [lag, T), both centred on the full-series mean,
///   C0   = (X0'X0 + Xt'Xt) / 2N,   Ctau = (X0'Xt + Xt'X0) / 2N,
/// then Ctau v = lambda C0 v. `regularization` adds that multiple of the
/// mean C0 diagonal to C0 first. Each eigenvector's sign is fixed so its
/// largest-magnitude entry is positive.
TicaModel tica_fit(const Eigen::MatrixXd& features, int lag, int dims, double regularization = 0.0);
Eigen::MatrixXd tica_project(const TicaModel& model, const Eigen::MatrixXd& features);

/// Lag-k autocorrelation of a scalar series (mean and variance over the whole series).
double autocorrelation(std::span<const double> x, int lag);

enum class TicaW1Mode { marginal, sliced };

/// Mean over the TIC marginals of the 1-D W1 between the projected samples, or
/// with `sliced`, the mean 1-D W1 along `n_directions` seeded unit directions.
double tica_w1(const Eigen::MatrixXd& model_proj, const Eigen::MatrixXd& ref_proj,
               TicaW1Mode mode = TicaW1Mode::marginal, int n_directions = 64, std::uint64_t seed = 0);

/// Mean tica_w1 between the reference and bootstrap resamples of itself.
double tica_w1_noise_floor(const Eigen::MatrixXd& ref_proj, int n_boot, std::uint64_t seed);

/// Per frame, the fraction of listed pairs closer than r_contact.
std::vector<double> reaction_coordinate(std::span<const CGFrame> traj,
                                        std::span<const std::pair<int, int>> pairs, double r_contact);

struct InternalCoordinates {
  std::vector<double> bonds;      // nm, consecutive beads
  std::vector<double> angles;     // rad, consecutive triples
  std::vector<double> dihedrals;  // rad in (-pi, pi], consecutive quadruples
  bool angles_available = true;
  bool dihedrals_available = true;
};

InternalCoordinates internal_coordinate_distributions(std::span<const CGFrame> traj);

struct BenchmarkConfig {
  int tica_lag = 10;   // saved frames
  int tica_dims = 2;
  double tica_regularization = 1e-8;
  TicaW1Mode w1_mode = TicaW1Mode::marginal;
  int sliced_directions = 64;
  std::vector<std::pair<int, int>> contact_pairs;
  double r_contact = 0.6;  // nm
  int kde_points = 200;
  int histogram_bins = 60;
  std::uint64_t rng_seed = 0;
};

struct Curve {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct BenchmarkReport {
  double w1_tica_kde = 0.0;
  double w1_reaction_coordinate = 0.0;
  double w1_bond_length = 0.0;
  double w1_bond_angle = 0.0;
  double w1_dihedral = 0.0;
  bool dihedral_available = true;
  std::size_t n_model_frames = 0;
  std::size_t n_ref_frames = 0;
  Eigen::VectorXd tica_eigenvalues;  // top dims
  BenchmarkConfig config;
  std::vector<Curve> plots;          // KDE curves and histograms
};

BenchmarkReport benchmark(std::span<const CGFrame> model_traj, std::span<const CGFrame> ref_traj,
                          const BenchmarkConfig& cfg);
/// As above with a TICA model already fit on the reference.
BenchmarkReport benchmark(std::span<const CGFrame> model_traj, std::span<const CGFrame> ref_traj,
                          const TicaModel& tica, const BenchmarkConfig& cfg);

std::string to_json(const BenchmarkReport& r);
/// One CSV per curve, `<dir>/<name>.csv`, first line the column names.
void write_plot_csvs(const std::filesystem::path& dir, std::span<const Curve> curves);
void write_csv(const std::filesystem::path& path, const Curve& curve);

}  // namespace almd
