#include "almd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "almd/rng.hpp"

namespace almd {

Eigen::MatrixXd featurize(std::span<const CGFrame> traj) {
  if (traj.empty()) return {};
  const Eigen::Index M = traj.front().coords.rows();
  if (M < 2) throw Error("featurize: need at least 2 beads");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(traj.size()), M * (M - 1) / 2);
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const Points3d& R = traj[t].coords;
    if (R.rows() != M) throw Error("featurize: frame " + std::to_string(t) + " has a different bead count");
    Eigen::Index c = 0;
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = i + 1; j < M; ++j) X(static_cast<Eigen::Index>(t), c++) = (R.row(i) - R.row(j)).norm();
  }
  return X;
}

TicaModel tica_fit(const Eigen::MatrixXd& X, int lag, int dims, double regularization) {
  if (lag < 1) throw Error("tica_fit: lag must be at least 1");
  if (dims < 1 || dims > X.cols()) throw Error("tica_fit: dims must lie in [1, n_features]");
  if (X.rows() <= lag + dims)
    throw Error("tica_fit: series of " + std::to_string(X.rows()) + " frames is too short for lag " +
                std::to_string(lag));
  TicaModel m;
  m.lag = lag;
  m.mean = X.colwise().mean().transpose();
  const Eigen::Index N = X.rows() - lag;
  const Eigen::MatrixXd X0 = X.topRows(N).rowwise() - m.mean.transpose();
  const Eigen::MatrixXd Xt = X.bottomRows(N).rowwise() - m.mean.transpose();
  m.c0 = (X0.transpose() * X0 + Xt.transpose() * Xt) / (2.0 * static_cast<double>(N));
  m.ctau = (X0.transpose() * Xt + Xt.transpose() * X0) / (2.0 * static_cast<double>(N));
  Eigen::MatrixXd c0 = m.c0;
  if (regularization > 0.0) c0.diagonal().array() += regularization * c0.diagonal().mean();
  const GeneralizedEigen ge = generalized_sym_eig(m.ctau, c0);
  m.eigenvalues = ge.values;
  m.projection = ge.vectors.leftCols(dims);
  for (int k = 0; k < dims; ++k) {
    Eigen::Index imax = 0;
    m.projection.col(k).cwiseAbs().maxCoeff(&imax);
    if (m.projection(imax, k) < 0.0) m.projection.col(k) *= -1.0;
  }
  return m;
}

Eigen::MatrixXd tica_project(const TicaModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.mean.size()) throw Error("tica_project: feature count differs from the model");
  return (X.rowwise() - model.mean.transpose()) * model.projection;
}

double autocorrelation(std::span<const double> x, int lag) {
  if (lag < 0 || static_cast<std::size_t>(lag) >= x.size()) throw Error("autocorrelation: lag out of range");
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd c = v.array() - v.mean();
  const Eigen::Index n = c.size() - lag;
  const double var = c.squaredNorm() / static_cast<double>(c.size());
  return c.head(n).dot(c.tail(n)) / static_cast<double>(n) / var;
}

namespace {

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index k) {
  return {m.col(k).data(), m.col(k).data() + m.rows()};
}

}  // namespace

double tica_w1(const Eigen::MatrixXd& model_proj, const Eigen::MatrixXd& ref_proj, TicaW1Mode mode,
               int n_directions, std::uint64_t seed) {
  if (model_proj.rows() == 0 || ref_proj.rows() == 0) throw Error("tica_w1: empty projection");
  if (model_proj.cols() != ref_proj.cols()) throw Error("tica_w1: dimension mismatch");
  const Eigen::Index d = ref_proj.cols();
  double acc = 0.0;
  if (mode == TicaW1Mode::marginal) {
    for (Eigen::Index k = 0; k < d; ++k) acc += wasserstein1(column(model_proj, k), column(ref_proj, k));
    return acc / static_cast<double>(d);
  }
  if (n_directions < 1) throw Error("tica_w1: need at least one slicing direction");
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int s = 0; s < n_directions; ++s) {
    Eigen::VectorXd u(d);
    for (Eigen::Index k = 0; k < d; ++k) u[k] = g(rng);
    u.normalize();
    const Eigen::VectorXd a = model_proj * u, b = ref_proj * u;
    acc += wasserstein1({a.data(), static_cast<std::size_t>(a.size())}, {b.data(), static_cast<std::size_t>(b.size())});
  }
  return acc / n_directions;
}

double tica_w1_noise_floor(const Eigen::MatrixXd& ref_proj, int n_boot, std::uint64_t seed) {
  if (n_boot < 1) throw Error("tica_w1_noise_floor: n_boot must be at least 1");
  Rng rng = make_rng(seed, 0);
  std::uniform_int_distribution<Eigen::Index> pick(0, ref_proj.rows() - 1);
  double acc = 0.0;
  for (int b = 0; b < n_boot; ++b) {
    Eigen::MatrixXd res(ref_proj.rows(), ref_proj.cols());
    for (Eigen::Index i = 0; i < res.rows(); ++i) res.row(i) = ref_proj.row(pick(rng));
    acc += tica_w1(res, ref_proj);
  }
  return acc / n_boot;
}

std::vector<double> reaction_coordinate(std::span<const CGFrame> traj, std::span<const std::pair<int, int>> pairs,
                                        double r_contact) {
  if (pairs.empty()) throw Error("reaction_coordinate: empty pair list");
  if (!(r_contact > 0.0)) throw Error("reaction_coordinate: r_contact must be positive");
  std::vector<double> out;
  out.reserve(traj.size());
  for (const auto& f : traj) {
    int in = 0;
    for (auto [i, j] : pairs) {
      if (i < 0 || j < 0 || i >= f.coords.rows() || j >= f.coords.rows() || i == j)
        throw Error("reaction_coordinate: invalid pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
      if ((f.coords.row(i) - f.coords.row(j)).norm() < r_contact) ++in;
    }
    out.push_back(static_cast<double>(in) / static_cast<double>(pairs.size()));
  }
  return out;
}

InternalCoordinates internal_coordinate_distributions(std::span<const CGFrame> traj) {
  InternalCoordinates ic;
  const Eigen::Index M = traj.empty() ? 0 : traj.front().coords.rows();
  ic.angles_available = M >= 3;
  ic.dihedrals_available = M >= 4;
  for (const auto& f : traj) {
    const Points3d& R = f.coords;
    if (R.rows() != M) throw Error("internal_coordinate_distributions: bead count mismatch");
    auto p = [&](Eigen::Index i) -> Vec3<double> { return R.row(i).transpose(); };
    for (Eigen::Index i = 0; i + 1 < M; ++i) ic.bonds.push_back((R.row(i + 1) - R.row(i)).norm());
    for (Eigen::Index i = 0; i + 2 < M; ++i) ic.angles.push_back(angle(p(i), p(i + 1), p(i + 2)));
    for (Eigen::Index i = 0; i + 3 < M; ++i) ic.dihedrals.push_back(dihedral(p(i), p(i + 1), p(i + 2), p(i + 3)));
  }
  return ic;
}

namespace {

Curve histogram_curve(const std::string& name, const std::vector<double>& model, const std::vector<double>& ref,
                      int bins) {
  Curve c{name, {"bin_lo", "bin_hi", "model_density", "ref_density"}, {}};
  if (model.empty() || ref.empty()) return c;
  double lo = std::min(*std::min_element(model.begin(), model.end()), *std::min_element(ref.begin(), ref.end()));
  double hi = std::max(*std::max_element(model.begin(), model.end()), *std::max_element(ref.begin(), ref.end()));
  if (!(hi > lo)) hi = lo + 1e-6;
  const Histogram hm = histogram(model, static_cast<std::size_t>(bins), lo, hi);
  const Histogram hr = histogram(ref, static_cast<std::size_t>(bins), lo, hi);
  const double w = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) {
    const auto k = static_cast<std::size_t>(b);
    c.rows.push_back({hm.edges[k], hm.edges[k + 1], static_cast<double>(hm.counts[k]) / (w * static_cast<double>(model.size())),
                      static_cast<double>(hr.counts[k]) / (w * static_cast<double>(ref.size()))});
  }
  return c;
}

Curve kde_curve(const std::string& name, const std::vector<double>& model, const std::vector<double>& ref, int n) {
  Curve c{name, {"x", "model_density", "ref_density"}, {}};
  const double hm = scott_bandwidth(model), hr = scott_bandwidth(ref);
  const double lo = std::min(*std::min_element(model.begin(), model.end()) - 3 * hm,
                             *std::min_element(ref.begin(), ref.end()) - 3 * hr);
  const double hi = std::max(*std::max_element(model.begin(), model.end()) + 3 * hm,
                             *std::max_element(ref.begin(), ref.end()) + 3 * hr);
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / std::max(1, n - 1);
  const auto dm = gaussian_kde(model, hm, grid), dr = gaussian_kde(ref, hr, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) c.rows.push_back({grid[i], dm[i], dr[i]});
  return c;
}

template <typename Fn>
auto labeled(const char* observable, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(std::string("benchmark [") + observable + "]: " + e.what());
  }
}

}  // namespace

BenchmarkReport benchmark(std::span<const CGFrame> model_traj, std::span<const CGFrame> ref_traj,
                          const BenchmarkConfig& cfg) {
  if (ref_traj.empty()) throw Error("benchmark: reference trajectory is empty");
  const TicaModel tica = labeled("tica_kde", [&] {
    return tica_fit(featurize(ref_traj), cfg.tica_lag, cfg.tica_dims, cfg.tica_regularization);
  });
  return benchmark(model_traj, ref_traj, tica, cfg);
}

BenchmarkReport benchmark(std::span<const CGFrame> model_traj, std::span<const CGFrame> ref_traj,
                          const TicaModel& tica, const BenchmarkConfig& cfg) {
  if (model_traj.empty()) throw Error("benchmark: model trajectory is empty");
  if (ref_traj.empty()) throw Error("benchmark: reference trajectory is empty");
  if (model_traj.front().coords.rows() != ref_traj.front().coords.rows())
    throw Error("benchmark: model and reference bead counts differ");
  BenchmarkReport r;
  r.config = cfg;
  r.n_model_frames = model_traj.size();
  r.n_ref_frames = ref_traj.size();
  r.tica_eigenvalues = tica.eigenvalues.head(tica.dims());

  labeled("tica_kde", [&] {
    const Eigen::MatrixXd pm = tica_project(tica, featurize(model_traj));
    const Eigen::MatrixXd pr = tica_project(tica, featurize(ref_traj));
    r.w1_tica_kde = tica_w1(pm, pr, cfg.w1_mode, cfg.sliced_directions, cfg.rng_seed);
    for (int k = 0; k < tica.dims(); ++k)
      r.plots.push_back(kde_curve("tica_kde_tic" + std::to_string(k + 1), column(pm, k), column(pr, k), cfg.kde_points));
    return 0;
  });
  labeled("reaction_coordinate", [&] {
    if (cfg.contact_pairs.empty()) return 0;
    const auto a = reaction_coordinate(model_traj, cfg.contact_pairs, cfg.r_contact);
    const auto b = reaction_coordinate(ref_traj, cfg.contact_pairs, cfg.r_contact);
    r.w1_reaction_coordinate = wasserstein1(a, b);
    r.plots.push_back(histogram_curve("hist_reaction_coordinate", a, b, static_cast<int>(cfg.contact_pairs.size()) + 1));
    return 0;
  });
  const InternalCoordinates im = labeled("internal_coordinates", [&] { return internal_coordinate_distributions(model_traj); });
  const InternalCoordinates ir = labeled("internal_coordinates", [&] { return internal_coordinate_distributions(ref_traj); });
  labeled("bond_length", [&] {
    r.w1_bond_length = wasserstein1(im.bonds, ir.bonds);
    r.plots.push_back(histogram_curve("hist_bond_length", im.bonds, ir.bonds, cfg.histogram_bins));
    return 0;
  });
  labeled("bond_angle", [&] {
    if (!im.angles_available) return 0;
    r.w1_bond_angle = wasserstein1(im.angles, ir.angles);
    r.plots.push_back(histogram_curve("hist_bond_angle", im.angles, ir.angles, cfg.histogram_bins));
    return 0;
  });
  labeled("dihedral", [&] {
    r.dihedral_available = im.dihedrals_available;
    if (!im.dihedrals_available) return 0;
    r.w1_dihedral = wasserstein1(im.dihedrals, ir.dihedrals);
    r.plots.push_back(histogram_curve("hist_dihedral", im.dihedrals, ir.dihedrals, cfg.histogram_bins));
    return 0;
  });
  return r;
}

std::string to_json(const BenchmarkReport& r) {
  nlohmann::ordered_json j;
  j["w1"] = {{"tica_kde", r.w1_tica_kde},
             {"reaction_coordinate", r.w1_reaction_coordinate},
             {"bond_length", r.w1_bond_length},
             {"bond_angle", r.w1_bond_angle},
             {"dihedral", r.w1_dihedral}};
  j["dihedral_available"] = r.dihedral_available;
  j["n_model_frames"] = r.n_model_frames;
  j["n_ref_frames"] = r.n_ref_frames;
  j["tica_eigenvalues"] = std::vector<double>(r.tica_eigenvalues.data(), r.tica_eigenvalues.data() + r.tica_eigenvalues.size());
  const BenchmarkConfig& c = r.config;
  j["config"] = {{"tica_lag", c.tica_lag},
                 {"tica_dims", c.tica_dims},
                 {"tica_regularization", c.tica_regularization},
                 {"tica_w1", c.w1_mode == TicaW1Mode::marginal ? "mean of 1-D marginal W1 over TICs" : "sliced W1"},
                 {"contact_pairs", c.contact_pairs},
                 {"r_contact", c.r_contact}};
  j["plots"] = nlohmann::ordered_json::array();
  for (const auto& p : r.plots) j["plots"].push_back(p.name + ".csv");
  return j.dump(2);
}

void write_csv(const std::filesystem::path& path, const Curve& curve) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < curve.columns.size(); ++i) os << (i ? "," : "") << curve.columns[i];
  os << '\n';
  os.precision(10);
  for (const auto& row : curve.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

void write_plot_csvs(const std::filesystem::path& dir, std::span<const Curve> curves) {
  std::filesystem::create_directories(dir);
  for (const auto& c : curves) write_csv(dir / (c.name + ".csv"), c);
}

}  // namespace almd
