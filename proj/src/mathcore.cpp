#include "almd/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace almd {

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 16;
  if (values.size() <= kLeaf) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

Superposition kabsch_align(const Eigen::Ref<const Points3d>& P, const Eigen::Ref<const Points3d>& Q) {
  if (P.rows() != Q.rows()) throw Error("kabsch_align: point sets differ in length");
  if (P.rows() == 0) throw Error("kabsch_align: empty point set");
  if (!P.allFinite() || !Q.allFinite()) throw Error("kabsch_align: non-finite coordinates");

  const Eigen::RowVector3d p_mean = P.colwise().mean();
  const Eigen::RowVector3d q_mean = Q.colwise().mean();
  const Points3d Pc = P.rowwise() - p_mean;
  const Points3d Qc = Q.rowwise() - q_mean;

  Superposition out;
  const Eigen::Matrix3d H = Pc.transpose() * Qc;
  if (H.norm() > 0.0) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d& U = svd.matrixU();
    const Eigen::Matrix3d& V = svd.matrixV();
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    if ((V * U.transpose()).determinant() < 0.0) D(2, 2) = -1.0;  // singular values are sorted
    out.rotation = V * D * U.transpose();
  }
  out.translation = q_mean.transpose() - out.rotation * p_mean.transpose();

  const Points3d diff = (Pc * out.rotation.transpose()) - Qc;
  out.rmsd = std::sqrt(diff.squaredNorm() / static_cast<double>(P.rows()));
  return out;
}

double rmsd(const Eigen::Ref<const Points3d>& P, const Eigen::Ref<const Points3d>& Q, RmsdMode mode) {
  if (mode == RmsdMode::aligned) return kabsch_align(P, Q).rmsd;
  if (P.rows() != Q.rows()) throw Error("rmsd: point sets differ in length");
  if (P.rows() == 0) throw Error("rmsd: empty point set");
  return std::sqrt((P - Q).squaredNorm() / static_cast<double>(P.rows()));
}

namespace {

std::vector<double> sorted_finite(std::span<const double> x, const char* what) {
  if (x.empty()) throw Error(std::string(what) + ": empty sample");
  std::vector<double> s(x.begin(), x.end());
  for (double v : s)
    if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite value");
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> sa = sorted_finite(a, "wasserstein1");
  const std::vector<double> sb = sorted_finite(b, "wasserstein1");
  const auto n = static_cast<long long>(sa.size());
  const auto m = static_cast<long long>(sb.size());

  // Sweep the merged support; between consecutive breakpoints the CDFs are
  // i/n and j/m, so the integrand is |i m - j n| / (n m) exactly.
  std::vector<double> pieces;
  pieces.reserve(sa.size() + sb.size());
  long long i = 0, j = 0;
  double x = std::min(sa.front(), sb.front());
  while (i < n || j < m) {
    const double next_a = i < n ? sa[i] : std::numeric_limits<double>::infinity();
    const double next_b = j < m ? sb[j] : std::numeric_limits<double>::infinity();
    const double next = std::min(next_a, next_b);
    if (next > x) {
      const long long gap = std::llabs(i * m - j * n);
      if (gap != 0) pieces.push_back(static_cast<double>(gap) * (next - x));
      x = next;
    }
    while (i < n && sa[i] == next) ++i;
    while (j < m && sb[j] == next) ++j;
  }
  return pairwise_sum(pieces) / (static_cast<double>(n) * static_cast<double>(m));
}

double scott_bandwidth(std::span<const double> sample) {
  if (sample.empty()) throw Error("scott_bandwidth: empty sample");
  const double n = static_cast<double>(sample.size());
  const double mean = pairwise_sum(sample) / n;
  std::vector<double> sq(sample.size());
  std::transform(sample.begin(), sample.end(), sq.begin(),
                 [mean](double v) { return (v - mean) * (v - mean); });
  const double var = sample.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
  const double sigma = std::sqrt(var);
  if (!(sigma > 0.0)) return 1e-3;
  return sigma * std::pow(n, -0.2);
}

std::vector<double> gaussian_kde(std::span<const double> sample, double bandwidth,
                                 std::span<const double> query) {
  if (!(bandwidth > 0.0)) throw Error("gaussian_kde: bandwidth must be positive");
  if (sample.empty()) throw Error("gaussian_kde: empty sample");
  const double norm = 1.0 / (static_cast<double>(sample.size()) * bandwidth *
                             std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(query.size());
  std::vector<double> terms(sample.size());
  for (std::size_t q = 0; q < query.size(); ++q) {
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const double z = (query[q] - sample[i]) / bandwidth;
      terms[i] = std::exp(-0.5 * z * z);
    }
    out[q] = norm * pairwise_sum(terms);
  }
  return out;
}

std::size_t Histogram::in_range() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t Histogram::support_width() const {
  std::size_t first = counts.size(), last = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) continue;
    first = std::min(first, k);
    last = k;
  }
  return first == counts.size() ? 0 : last - first + 1;
}

Histogram histogram(std::span<const double> values, std::size_t n_bins, double lo, double hi) {
  if (n_bins < 1) throw Error("histogram: need at least one bin");
  if (!(lo < hi)) throw Error("histogram: invalid range, lo must be below hi");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(n_bins, 0);
  h.edges.resize(n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t k = 0; k <= n_bins; ++k) h.edges[k] = lo + width * static_cast<double>(k);
  h.edges.back() = hi;
  for (double v : values) {
    if (v < lo) {
      ++h.underflow;
    } else if (v > hi) {
      ++h.overflow;
    } else {
      const double pos = std::ceil((v - lo) / width) - 1.0;
      const auto k = pos < 0.0 ? std::size_t{0} : static_cast<std::size_t>(pos);
      ++h.counts[std::min(k, n_bins - 1)];
    }
  }
  return h;
}

GeneralizedEigen generalized_sym_eig(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                     const Eigen::Ref<const Eigen::MatrixXd>& B) {
  const Eigen::Index d = A.rows();
  if (d == 0 || A.cols() != d || B.rows() != d || B.cols() != d)
    throw Error("generalized_sym_eig: matrices must be square and of equal size");
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error("generalized_sym_eig: A is not symmetric");

  GeneralizedEigen out;
  out.regularization = 1e-10 * B.trace() / static_cast<double>(d);
  Eigen::MatrixXd Breg = 0.5 * (B + B.transpose());
  Breg.diagonal().array() += out.regularization;
  Eigen::LLT<Eigen::MatrixXd> llt(Breg);
  if (llt.info() != Eigen::Success || !(out.regularization > 0.0))
    throw Error("generalized_sym_eig: B is not positive-definite after regularization; "
                "increase the regularization or remove redundant features");

  // C = L^-1 A L^-T is symmetric with the same spectrum.
  const Eigen::MatrixXd As = 0.5 * (A + A.transpose());
  Eigen::MatrixXd C = llt.matrixL().solve(As);
  C = llt.matrixL().solve(C.transpose()).transpose();
  C = 0.5 * (C + C.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  if (es.info() != Eigen::Success) throw Error("generalized_sym_eig: eigensolver failed");

  const Eigen::MatrixXd V = llt.matrixU().solve(es.eigenvectors());
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    out.values(k) = es.eigenvalues()(d - 1 - k);
    out.vectors.col(k) = V.col(d - 1 - k);
  }
  return out;
}

}  // namespace almd
