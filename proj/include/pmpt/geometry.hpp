#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "pmpt/linalg.hpp"
#include "pmpt/rng.hpp"

namespace pmpt {

struct Chart {
  std::string id;
  double radius = std::numeric_limits<double>::infinity();  // open-ball domain in coordinates
};

struct ChartTransition {
  int from = -1;
  int to = -1;
  std::function<Vec(const Vec&)> map;
  std::function<Mat(const Vec&)> jacobian;
  bool approximate_jacobian = false;  // set when the jacobian is finite-difference
};

// Finitely many charts with analytic transition maps. Immutable after
// construction; all operations on it are pure.
class ChartedManifold {
 public:
  std::string name;
  std::size_t dim = 0;
  std::vector<Chart> charts;
  std::vector<ChartTransition> transitions;

  // Optional embedding used by test oracles (S2 and the rotation group).
  std::function<Vec(int chart, const Vec&)> to_ambient;
  // Derivative of the chart-inverse into ambient coordinates (rows = ambient).
  std::function<Mat(int chart, const Vec&)> ambient_jacobian;

  // Spectral metadata for Galerkin spaces.
  std::vector<int> mode_indices;
  Vec decay_weights;

  int chart_index(const std::string& id) const {
    for (std::size_t i = 0; i < charts.size(); ++i)
      if (charts[i].id == id) return int(i);
    throw OutOfDomain("manifold '" + name + "' has no chart '" + id + "'");
  }

  bool in_domain(int chart, const Vec& coords, double grace = 1e-9) const {
    return norm(coords) <= charts[std::size_t(chart)].radius + grace;
  }

  const ChartTransition* find_transition(int from, int to) const {
    for (const auto& t : transitions)
      if (t.from == from && t.to == to) return &t;
    return nullptr;
  }
};

using ManifoldPtr = std::shared_ptr<const ChartedManifold>;

struct ManifoldPoint {
  int chart = 0;
  Vec coords;
};

struct TangentVector {
  ManifoldPoint base;
  Vec components;  // column semantics
};

struct CotangentVector {
  ManifoldPoint base;
  Vec components;  // row semantics
};

inline ManifoldPoint make_point(const ChartedManifold& m, const std::string& chart_id,
                                Vec coords) {
  int c = m.chart_index(chart_id);
  if (!m.in_domain(c, coords))
    throw OutOfDomain("point outside domain of chart '" + chart_id + "'");
  return ManifoldPoint{c, std::move(coords)};
}

// Coordinates of p in the target chart. Requires p to lie in the overlap.
inline Vec to_chart(const ChartedManifold& m, const ManifoldPoint& p, int target) {
  if (p.chart == target) return p.coords;
  const ChartTransition* tr = m.find_transition(p.chart, target);
  if (!tr)
    throw OutOfDomain("no transition " + m.charts[std::size_t(p.chart)].id + " -> " +
                      m.charts[std::size_t(target)].id);
  Vec x = tr->map(p.coords);
  if (!m.in_domain(target, x))
    throw OutOfDomain("point outside domain of chart '" + m.charts[std::size_t(target)].id + "'");
  return x;
}

inline ManifoldPoint rechart(const ChartedManifold& m, const ManifoldPoint& p, int target) {
  return ManifoldPoint{target, to_chart(m, p, target)};
}

inline TangentVector pushforward_vector(const ChartedManifold& m, const TangentVector& v,
                                        int target) {
  if (v.base.chart == target) return v;
  const ChartTransition* tr = m.find_transition(v.base.chart, target);
  if (!tr) throw OutOfDomain("no transition for pushforward");
  Vec x = tr->map(v.base.coords);
  if (!m.in_domain(target, x)) throw OutOfDomain("pushforward lands outside target chart");
  Mat j = tr->jacobian(v.base.coords);
  return TangentVector{ManifoldPoint{target, std::move(x)}, matvec(j, v.components)};
}

// Covector transport: the covector zeta, expressed in the chart of its base
// point, rewritten in `source` coordinates so that pairings are preserved.
inline CotangentVector pullback_covector(const ChartedManifold& m, const CotangentVector& zeta,
                                         int source) {
  if (zeta.base.chart == source) return zeta;
  const ChartTransition* tr = m.find_transition(source, zeta.base.chart);
  if (!tr) throw OutOfDomain("no transition for pullback");
  const ChartTransition* back = m.find_transition(zeta.base.chart, source);
  if (!back) throw OutOfDomain("no transition for pullback");
  Vec x_src = back->map(zeta.base.coords);
  if (!m.in_domain(source, x_src)) throw OutOfDomain("pullback lands outside source chart");
  Mat j = tr->jacobian(x_src);  // derivative of source -> current at the source coords
  return CotangentVector{ManifoldPoint{source, std::move(x_src)}, matTvec(j, zeta.components)};
}

// <zeta, v>. The tangent vector is rewritten in the covector's chart first;
// base points must then agree.
inline double pairing(const ChartedManifold& m, const CotangentVector& zeta,
                      const TangentVector& v) {
  TangentVector w = v;
  if (w.base.chart != zeta.base.chart) w = pushforward_vector(m, w, zeta.base.chart);
  if (norm(w.base.coords - zeta.base.coords) > 1e-12 * std::max(1.0, norm(zeta.base.coords)) + 1e-12)
    throw BasePointMismatch("pairing of covector and vector at different base points");
  return dot(zeta.components, w.components);
}

// ---------------------------------------------------------------------------
// Rotation helpers (exponential coordinates on SO(3))
// ---------------------------------------------------------------------------
namespace so3 {

inline Mat hat(const Vec& w) {
  Mat m(3, 3);
  m(0, 1) = -w[2];
  m(0, 2) = w[1];
  m(1, 0) = w[2];
  m(1, 2) = -w[0];
  m(2, 0) = -w[1];
  m(2, 1) = w[0];
  return m;
}

inline Mat exp(const Vec& w) {
  double th = norm(w);
  Mat k = hat(w);
  double a, b;
  if (th < 1e-8) {
    a = 1.0 - th * th / 6.0;
    b = 0.5 - th * th / 24.0;
  } else {
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / (th * th);
  }
  return Mat::identity(3) + a * k + b * matmul(k, k);
}

inline Vec log(const Mat& r) {
  double tr = r(0, 0) + r(1, 1) + r(2, 2);
  double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  double th = std::acos(c);
  Vec w = {r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  if (th < 1e-8) return 0.5 * w;
  if (th > 3.14159265)
    throw OutOfDomain("rotation at the edge of the exponential chart");
  return (th / (2.0 * std::sin(th))) * w;
}

inline Mat right_jacobian(const Vec& w) {
  double th = norm(w);
  Mat k = hat(w);
  double a, b;
  if (th < 1e-6) {
    a = 0.5 - th * th / 24.0;
    b = 1.0 / 6.0 - th * th / 120.0;
  } else {
    a = (1.0 - std::cos(th)) / (th * th);
    b = (th - std::sin(th)) / (th * th * th);
  }
  return Mat::identity(3) - a * k + b * matmul(k, k);
}

inline Mat right_jacobian_inv(const Vec& w) {
  double th = norm(w);
  Mat k = hat(w);
  double b;
  if (th < 1e-6) {
    b = 1.0 / 12.0 + th * th / 720.0;
  } else {
    b = 1.0 / (th * th) - (1.0 + std::cos(th)) / (2.0 * th * std::sin(th));
  }
  return Mat::identity(3) + 0.5 * k + b * matmul(k, k);
}

}  // namespace so3

// ---------------------------------------------------------------------------
// Built-in catalog
// ---------------------------------------------------------------------------

inline ManifoldPtr make_euclidean(std::size_t n) {
  auto m = std::make_shared<ChartedManifold>();
  m->name = "euclidean:" + std::to_string(n);
  m->dim = n;
  m->charts.push_back(Chart{"id", std::numeric_limits<double>::infinity()});
  m->to_ambient = [](int, const Vec& x) { return x; };
  m->ambient_jacobian = [n](int, const Vec&) { return Mat::identity(n); };
  return m;
}

inline ManifoldPtr make_galerkin(std::size_t n) {
  auto m = std::make_shared<ChartedManifold>();
  m->name = "galerkin:" + std::to_string(n);
  m->dim = n;
  m->charts.push_back(Chart{"id", std::numeric_limits<double>::infinity()});
  m->to_ambient = [](int, const Vec& x) { return x; };
  m->ambient_jacobian = [n](int, const Vec&) { return Mat::identity(n); };
  for (std::size_t k = 1; k <= n; ++k) {
    m->mode_indices.push_back(int(k));
    m->decay_weights.push_back(double(k) * double(k));
  }
  return m;
}

// S^2 with the two stereographic charts (projection from the north and the
// south pole). Chart radius 3 covers z <= 0.8 resp. z >= -0.8.
inline ManifoldPtr make_sphere2() {
  auto m = std::make_shared<ChartedManifold>();
  m->name = "sphere2";
  m->dim = 2;
  m->charts.push_back(Chart{"north", 3.0});
  m->charts.push_back(Chart{"south", 3.0});

  auto inversion = [](const Vec& p) {
    double s = dot(p, p);
    if (s < 1e-300) throw OutOfDomain("stereographic transition at projection center");
    return Vec{p[0] / s, p[1] / s};
  };
  auto inversion_jac = [](const Vec& p) {
    double s = dot(p, p);
    Mat j(2, 2);
    j(0, 0) = 1.0 / s - 2.0 * p[0] * p[0] / (s * s);
    j(0, 1) = -2.0 * p[0] * p[1] / (s * s);
    j(1, 0) = j(0, 1);
    j(1, 1) = 1.0 / s - 2.0 * p[1] * p[1] / (s * s);
    return j;
  };
  m->transitions.push_back(ChartTransition{0, 1, inversion, inversion_jac, false});
  m->transitions.push_back(ChartTransition{1, 0, inversion, inversion_jac, false});

  m->to_ambient = [](int chart, const Vec& p) {
    double s = dot(p, p), w = 1.0 / (s + 1.0);
    double z = (s - 1.0) * w;
    if (chart == 1) z = -z;
    return Vec{2.0 * p[0] * w, 2.0 * p[1] * w, z};
  };
  m->ambient_jacobian = [](int chart, const Vec& p) {
    double s = dot(p, p), w = 1.0 / (s + 1.0);
    Mat j(3, 2);
    j(0, 0) = 2.0 * w - 4.0 * p[0] * p[0] * w * w;
    j(0, 1) = -4.0 * p[0] * p[1] * w * w;
    j(1, 0) = j(0, 1);
    j(1, 1) = 2.0 * w - 4.0 * p[1] * p[1] * w * w;
    double sgn = (chart == 0) ? 1.0 : -1.0;
    j(2, 0) = sgn * 4.0 * p[0] * w * w;
    j(2, 1) = sgn * 4.0 * p[1] * w * w;
    return j;
  };
  return m;
}

// Ambient -> chart for S^2 (oracle helper).
inline Vec sphere2_project(int chart, const Vec& q) {
  double d = (chart == 0) ? (1.0 - q[2]) : (1.0 + q[2]);
  if (std::abs(d) < 1e-12) throw OutOfDomain("stereographic projection at its center");
  return Vec{q[0] / d, q[1] / d};
}

// Rotation group with two exponential charts, centered at the identity and
// at the half-turn about the z axis.
inline ManifoldPtr make_so3() {
  auto m = std::make_shared<ChartedManifold>();
  m->name = "so3";
  m->dim = 3;
  m->charts.push_back(Chart{"exp_id", 3.0});
  m->charts.push_back(Chart{"exp_zpi", 3.0});

  // base rotations: identity and Rz(pi)
  auto base = std::make_shared<std::vector<Mat>>();
  base->push_back(Mat::identity(3));
  base->push_back(so3::exp(Vec{0.0, 0.0, 3.14159265358979312}));

  auto trans_map = [base](int from, int to) {
    return [base, from, to](const Vec& w) {
      Mat r = matmul((*base)[std::size_t(from)], so3::exp(w));
      Mat s = matmul((*base)[std::size_t(to)].transposed(), r);
      return so3::log(s);
    };
  };
  auto trans_jac = [base, trans_map](int from, int to) {
    auto map = trans_map(from, to);
    return [map](const Vec& w) {
      Vec w2 = map(w);
      return matmul(so3::right_jacobian_inv(w2), so3::right_jacobian(w));
    };
  };
  m->transitions.push_back(ChartTransition{0, 1, trans_map(0, 1), trans_jac(0, 1), false});
  m->transitions.push_back(ChartTransition{1, 0, trans_map(1, 0), trans_jac(1, 0), false});

  m->to_ambient = [base](int chart, const Vec& w) {
    Mat r = matmul((*base)[std::size_t(chart)], so3::exp(w));
    Vec out(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out[std::size_t(3 * i + j)] = r(std::size_t(i), std::size_t(j));
    return out;
  };
  m->ambient_jacobian = [base](int chart, const Vec& w) {
    // columns: d vec(R exp(w^)) / d w_i = vec(R exp(w^) (Jr e_i)^)
    Mat r = matmul((*base)[std::size_t(chart)], so3::exp(w));
    Mat jr = so3::right_jacobian(w);
    Mat out(9, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      Vec jcol(3);
      for (std::size_t i = 0; i < 3; ++i) jcol[i] = jr(i, c);
      Mat d = matmul(r, so3::hat(jcol));
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) out(3 * i + j, c) = d(i, j);
    }
    return out;
  };
  return m;
}

// User-defined manifolds get finite-difference transition jacobians unless
// analytic ones are supplied; these are flagged approximate.
inline std::function<Mat(const Vec&)> fd_jacobian(std::function<Vec(const Vec&)> map,
                                                  double step = 1e-6) {
  return [map, step](const Vec& x) {
    Vec f0 = map(x);
    Mat j(f0.size(), x.size());
    for (std::size_t c = 0; c < x.size(); ++c) {
      Vec xp = x, xm = x;
      xp[c] += step;
      xm[c] -= step;
      Vec fp = map(xp), fm = map(xm);
      for (std::size_t r = 0; r < f0.size(); ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * step);
    }
    return j;
  };
}

// Catalog lookup by external name: "euclidean:n", "sphere2", "so3",
// "galerkin:n".
inline ManifoldPtr manifold_by_name(const std::string& name) {
  auto colon = name.find(':');
  std::string head = name.substr(0, colon);
  if (head == "euclidean" || head == "galerkin") {
    if (colon == std::string::npos)
      throw ParseError("manifold '" + name + "' needs a dimension, e.g. '" + head + ":3'");
    int n = 0;
    try {
      n = std::stoi(name.substr(colon + 1));
    } catch (...) {
      throw ParseError("bad dimension in manifold name '" + name + "'");
    }
    if (n < 1) throw ParseError("manifold dimension must be positive: '" + name + "'");
    return head == "euclidean" ? make_euclidean(std::size_t(n)) : make_galerkin(std::size_t(n));
  }
  if (name == "sphere2") return make_sphere2();
  if (name == "so3") return make_so3();
  throw ParseError("unknown manifold '" + name + "'");
}

// Deterministic in-domain point generator used by property tests.
inline ManifoldPoint sample_point(const ChartedManifold& m, SplitMix64& rng) {
  int chart = int(rng.next() % m.charts.size());
  double radius = std::min(m.charts[std::size_t(chart)].radius, 2.0);
  Vec x(m.dim);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  double nx = norm(x);
  double r = radius * 0.9 * rng.uniform();
  if (nx > 1e-12) x *= r / nx;
  return ManifoldPoint{chart, x};
}

}  // namespace pmpt
