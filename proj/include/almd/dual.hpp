#pragma once

// First-order forward-mode number a + b eps (eps^2 = 0). Running a
// reverse-mode pass in Dual with the inputs seeded along a direction v yields
// the directional derivative of every adjoint along v.

#include <Eigen/Core>

#include <cmath>

namespace almd {

struct Dual {
  double v = 0.0;  // value
  double d = 0.0;  // tangent

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT: implicit lift from double
  constexpr Dual(double value, double tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    d = (d - v * inv * o.d) * inv;
    v *= inv;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
inline Dual operator+(const Dual& a) { return a; }

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
inline bool operator==(const Dual& a, const Dual& b) { return a.v == b.v && a.d == b.d; }
inline bool operator!=(const Dual& a, const Dual& b) { return !(a == b); }

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }
inline Dual log1p(const Dual& a) { return {std::log1p(a.v), a.d / (1.0 + a.v)}; }
inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.v);
  return {s, s > 0.0 ? 0.5 * a.d / s : 0.0};
}
inline Dual cos(const Dual& a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }
inline Dual sin(const Dual& a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual abs(const Dual& a) { return a.v < 0.0 ? -a : a; }
inline bool isfinite(const Dual& a) { return std::isfinite(a.v) && std::isfinite(a.d); }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace almd

namespace Eigen {

template <>
struct NumTraits<almd::Dual> : GenericNumTraits<double> {
  using Real = almd::Dual;
  using NonInteger = almd::Dual;
  using Nested = almd::Dual;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 0,
    ReadCost = 2,
    AddCost = 2,
    MulCost = 4,
  };
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<almd::Dual, double, BinaryOp> {
  using ReturnType = almd::Dual;
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, almd::Dual, BinaryOp> {
  using ReturnType = almd::Dual;
};

}  // namespace Eigen
