#pragma once

#include <algorithm>
#include <cstddef>

#include "pmpt/common.hpp"

namespace pmpt {

// Dense row-major matrix, sized for chart dimensions (n <= a few dozen).
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  Mat transposed() const {
    Mat t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Vec row(std::size_t i) const {
    return Vec(data_.begin() + i * cols_, data_.begin() + (i + 1) * cols_);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline Vec matvec(const Mat& m, const Vec& v) {
  Vec r(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
    r[i] = s;
  }
  return r;
}

// m^T v without forming the transpose.
inline Vec matTvec(const Mat& m, const Vec& v) {
  Vec r(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += m(i, j) * v[i];
  return r;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat r(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) r(i, j) += aik * b(k, j);
    }
  return r;
}

inline Mat operator+(const Mat& a, const Mat& b) {
  Mat r = a;
  for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] += b.data()[i];
  return r;
}
inline Mat operator-(const Mat& a, const Mat& b) {
  Mat r = a;
  for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] -= b.data()[i];
  return r;
}
inline Mat operator*(double s, Mat a) {
  for (double& x : a.data()) x *= s;
  return a;
}

inline double frobenius_norm(const Mat& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

// Spectral norm: closed form up to 2x2, power iteration on m^T m above.
// Deterministic start vector; accurate to ~1e-12 after the fixed iteration
// budget for the small matrices used here.
inline double operator_norm(const Mat& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  if (m.rows() == 1 || m.cols() == 1) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
  }
  if (m.rows() == 2 && m.cols() == 2) {
    double a = m(0, 0) * m(0, 0) + m(1, 0) * m(1, 0);
    double b = m(0, 0) * m(0, 1) + m(1, 0) * m(1, 1);
    double c = m(0, 1) * m(0, 1) + m(1, 1) * m(1, 1);
    double mid = 0.5 * (a + c), rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    return std::sqrt(std::max(0.0, mid + rad));
  }
  Vec v(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) v[j] = 1.0 + 0.1 * double(j + 1);
  double nv = norm(v);
  for (double& x : v) x /= nv;
  double lam = 0.0;
  for (int it = 0; it < 100; ++it) {
    Vec w = matTvec(m, matvec(m, v));
    double nw = norm(w);
    if (nw == 0.0) return 0.0;
    for (double& x : w) x /= nw;
    double lam_new = nw;
    v = std::move(w);
    if (it > 3 && std::abs(lam_new - lam) <= 1e-15 * std::max(1.0, lam_new)) {
      lam = lam_new;
      break;
    }
    lam = lam_new;
  }
  return std::sqrt(lam);
}

// LU factorization with partial pivoting, in place. Returns false when the
// matrix is numerically singular.
inline bool lu_factor(Mat& a, std::vector<std::size_t>& perm) {
  const std::size_t n = a.rows();
  perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > best) {
        best = std::abs(a(i, k));
        p = i;
      }
    if (best < 1e-300) return false;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      std::swap(perm[k], perm[p]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      a(i, k) /= a(k, k);
      const double f = a(i, k);
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return true;
}

inline Vec lu_solve_factored(const Mat& lu, const std::vector<std::size_t>& perm, const Vec& b) {
  const std::size_t n = lu.rows();
  Vec x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[perm[i]];
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) x[i] -= lu(i, j) * x[j];
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = i + 1; j < n; ++j) x[i] -= lu(i, j) * x[j];
    x[i] /= lu(i, i);
  }
  return x;
}

// Solves a x = b; throws JacobianSingular on rank deficiency.
inline Vec solve(Mat a, const Vec& b) {
  std::vector<std::size_t> perm;
  if (!lu_factor(a, perm)) throw JacobianSingular("linear solve: singular matrix");
  return lu_solve_factored(a, perm, b);
}

// Minimum-norm least squares via ridge-regularized normal equations.
// Good enough for the small, well-scaled systems used here.
inline Vec least_squares(const Mat& a, const Vec& b, double ridge = 1e-12) {
  const std::size_t n = a.cols();
  Mat ata(n, n);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) ata(j, k) += a(i, j) * a(i, k);
  for (std::size_t j = 0; j < n; ++j) ata(j, j) += ridge;
  return solve(ata, matTvec(a, b));
}

// Orthonormal basis of the null space of a (rows < cols), by Gram-Schmidt
// against the row space. Rows are assumed linearly independent.
inline std::vector<Vec> null_space_basis(const Mat& a) {
  const std::size_t n = a.cols();
  std::vector<Vec> rows;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    Vec r = a.row(i);
    for (const Vec& q : rows) r = axpy(-dot(r, q), q, r);
    double nr = norm(r);
    if (nr > 1e-12) {
      r *= 1.0 / nr;
      rows.push_back(r);
    }
  }
  std::vector<Vec> basis;
  for (std::size_t j = 0; j < n; ++j) {
    Vec e = unit(n, j);
    for (const Vec& q : rows) e = axpy(-dot(e, q), q, e);
    for (const Vec& q : basis) e = axpy(-dot(e, q), q, e);
    double ne = norm(e);
    if (ne > 1e-10) {
      e *= 1.0 / ne;
      basis.push_back(e);
    }
  }
  return basis;
}

}  // namespace pmpt
