#pragma once

// Small dense numerical kernels shared by every stage: rigid superposition,
// 1-D optimal transport, density estimation, histograms and internal
// coordinates. Geometry helpers are templated on the scalar type.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace almd {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

/// An M x 3 row-major block of 3-vectors. Row-major storage makes the
/// buffer identical to the flat (x1, y1, z1, x2, ...) layout used on disk.
template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Points3d = Points<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Summation
// ---------------------------------------------------------------------------

/// Pairwise (tree) summation; rounding error grows as O(log n).
double pairwise_sum(std::span<const double> values);

// ---------------------------------------------------------------------------
// Rigid superposition
// ---------------------------------------------------------------------------

struct Superposition {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double rmsd = 0.0;
};

/// Optimal rigid motion x -> rotation * x + translation taking P onto Q in
/// the least-squares sense (Kabsch). The rotation is proper (det = +1);
/// a reflection in the SVD solution is removed by flipping the axis of the
/// smallest singular value.
Superposition kabsch_align(const Eigen::Ref<const Points3d>& P,
                           const Eigen::Ref<const Points3d>& Q);

enum class RmsdMode { aligned, unaligned };

double rmsd(const Eigen::Ref<const Points3d>& P, const Eigen::Ref<const Points3d>& Q,
            RmsdMode mode = RmsdMode::aligned);

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// W1 between the empirical distributions of a and b, computed exactly as the
/// integral of |F_a - F_b| over the merged support.
double wasserstein1(std::span<const double> a, std::span<const double> b);

/// Scott's rule h = sigma * n^(-1/5). Falls back to 1e-3 for a zero-variance
/// sample.
double scott_bandwidth(std::span<const double> sample);

std::vector<double> gaussian_kde(std::span<const double> sample, double bandwidth,
                                 std::span<const double> query);

struct Histogram {
  std::vector<std::size_t> counts;
  std::vector<double> edges;  // counts.size() + 1 entries
  std::size_t underflow = 0;
  std::size_t overflow = 0;
  double lo = 0.0;
  double hi = 0.0;

  std::size_t in_range() const;
  /// Number of bins between the first and last non-empty bin, inclusive.
  std::size_t support_width() const;
};

/// Bins are (lo + k w, lo + (k+1) w]; the first bin also takes x == lo.
Histogram histogram(std::span<const double> values, std::size_t n_bins, double lo, double hi);

// ---------------------------------------------------------------------------
// Generalized symmetric eigenproblem
// ---------------------------------------------------------------------------

struct GeneralizedEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns, B-orthonormal
  double regularization = 0.0;
};

/// Solves A v = lambda B v for symmetric A and symmetric positive-definite B.
/// B is regularized by eps = 1e-10 trace(B) / d on its diagonal before the
/// Cholesky factorization.
GeneralizedEigen generalized_sym_eig(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                     const Eigen::Ref<const Eigen::MatrixXd>& B);

// ---------------------------------------------------------------------------
// Internal coordinates
// ---------------------------------------------------------------------------

inline constexpr double kMinSeparation = 1e-9;

template <typename Scalar>
Scalar angle(const Vec3<Scalar>& a, const Vec3<Scalar>& b, const Vec3<Scalar>& c) {
  const Vec3<Scalar> u = a - b;
  const Vec3<Scalar> v = c - b;
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (nu <= kMinSeparation || nv <= kMinSeparation) throw Error("angle: coincident points");
  Scalar cosine = u.dot(v) / (nu * nv);
  cosine = std::clamp(cosine, Scalar(-1), Scalar(1));
  return std::acos(cosine);
}

/// Signed angle between the planes (a,b,c) and (b,c,d), IUPAC sign
/// convention, in (-pi, pi].
template <typename Scalar>
Scalar dihedral(const Vec3<Scalar>& a, const Vec3<Scalar>& b, const Vec3<Scalar>& c,
                const Vec3<Scalar>& d) {
  const Vec3<Scalar> b1 = b - a;
  const Vec3<Scalar> b2 = c - b;
  const Vec3<Scalar> b3 = d - c;
  if (b1.norm() <= kMinSeparation || b2.norm() <= kMinSeparation || b3.norm() <= kMinSeparation)
    throw Error("dihedral: coincident points");
  const Vec3<Scalar> n1 = b1.cross(b2);
  const Vec3<Scalar> n2 = b2.cross(b3);
  const Scalar scale = b1.norm() * b2.norm() * b3.norm();
  if (n1.norm() <= 1e-12 * scale || n2.norm() <= 1e-12 * scale)
    throw Error("dihedral: collinear points, torsion undefined");
  const Scalar y = b2.norm() * b1.dot(n2);
  const Scalar x = n1.dot(n2);
  Scalar phi = std::atan2(y, x);
  if (phi <= -std::numbers::pi) phi = std::numbers::pi;
  return phi;
}

}  // namespace almd
