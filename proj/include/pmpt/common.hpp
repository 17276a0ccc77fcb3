#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmpt {

using Vec = std::vector<double>;

// Error hierarchy. Hard failures throw; soft outcomes (sampled estimates,
// flagged non-convergence) are returned in result structs instead.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct OutOfDomain : Error {
  using Error::Error;
};
struct BasePointMismatch : Error {
  using Error::Error;
};
struct BlowUp : Error {
  using Error::Error;
};
struct NonFiniteState : Error {
  using Error::Error;
};
struct TubeEscape : Error {
  using Error::Error;
};
struct GridTooCoarse : Error {
  using Error::Error;
};
struct BudgetExceeded : Error {
  using Error::Error;
};
struct ChartMismatch : Error {
  using Error::Error;
};
struct UnsupportedSet : Error {
  using Error::Error;
};
struct NotControllable : Error {
  using Error::Error;
};
struct JacobianSingular : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline Vec& operator+=(Vec& a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}
inline Vec& operator-=(Vec& a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}
inline Vec& operator*=(Vec& a, double s) {
  for (double& x : a) x *= s;
  return a;
}
inline Vec operator+(Vec a, const Vec& b) { return a += b; }
inline Vec operator-(Vec a, const Vec& b) { return a -= b; }
inline Vec operator*(double s, Vec a) { return a *= s; }
inline Vec operator-(Vec a) { return a *= -1.0; }

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec axpy(double a, const Vec& x, const Vec& y) {
  Vec r(y);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += a * x[i];
  return r;
}

inline Vec zeros(std::size_t n) { return Vec(n, 0.0); }

inline Vec unit(std::size_t n, std::size_t i) {
  Vec e(n, 0.0);
  e[i] = 1.0;
  return e;
}

}  // namespace pmpt
