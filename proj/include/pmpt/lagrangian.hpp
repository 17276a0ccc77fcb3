#pragma once

#include <memory>

#include "pmpt/dynamics.hpp"

namespace pmpt {

// C^2 falloff: 1 on [0,1], quintic-smoothstep decay to 0 on [1,2].
inline double tube_cutoff(double ratio) {
  if (ratio <= 1.0) return 1.0;
  if (ratio >= 2.0) return 0.0;
  double s = ratio - 1.0;
  return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

// Time-indexed chart psi_t = phi . P_{t,0} transported along the flow of the
// extension field V_t(x) = cutoff(|x - x_*(t)|/radius) * xdot_*(t). Inside
// the tube V_t does not depend on x, so P_{t,0} is the translation by
// x_*(0) - x_*(t) there and psi_t is evaluated in closed form; the numeric
// flow is kept for oracle checks.
class LagrangianChart {
 public:
  ManifoldPtr manifold;
  int base_chart = 0;
  double radius = 1.0;
  std::vector<TrajectoryPiece> reference;  // all pieces in base_chart
  Vec x0_star;

  double t_begin() const { return reference.front().sol.t_begin; }
  double t_end() const { return reference.back().sol.t_end; }

  Vec ref_coords(double t) const {
    for (const auto& p : reference)
      if (t <= p.sol.t_end + 1e-12) return p.sol.eval(t);
    return reference.back().sol.eval(t);
  }

  Vec ref_velocity(double t) const {
    for (const auto& p : reference)
      if (t <= p.sol.t_end + 1e-12) return p.sol.eval_derivative(t);
    return reference.back().sol.eval_derivative(t);
  }

  Vec extension_field(double t, const Vec& x) const {
    double d = norm(x - ref_coords(t));
    double c = tube_cutoff(d / radius);
    return c * ref_velocity(t);
  }

  double deviation(double t, const Vec& x_base) const { return norm(x_base - ref_coords(t)); }

  // psi_t in closed form; valid while the point stays inside the tube.
  Vec psi(double t, const ManifoldPoint& q) const {
    Vec x = (q.chart == base_chart) ? q.coords : to_chart(*manifold, q, base_chart);
    double d = deviation(t, x);
    if (d > radius + 1e-9)
      throw TubeEscape("point at deviation " + fmt17(d) + " outside tube radius " + fmt17(radius));
    return x0_star + (x - ref_coords(t));
  }

  ManifoldPoint psi_inv(double t, const Vec& xhat) const {
    double d = norm(xhat - x0_star);
    if (d > radius + 1e-9) throw TubeEscape("reduced coordinates outside tube");
    return ManifoldPoint{base_chart, xhat - x0_star + ref_coords(t)};
  }

  // Numeric flow of V_t from time s to time t (oracle path; the closed form
  // above is exact on the tube).
  Vec flow_numeric(double s, double t, const Vec& x, double tol = 1e-10) const {
    OdeRhs rhs = [this](double tt, const Vec& y, Vec& dy) { dy = extension_field(tt, y); };
    OdeOptions opt;
    opt.abs_tol = tol;
    opt.rel_tol = tol;
    return integrate_ode(rhs, s, t, x, opt).y_end;
  }
};

using LagrangianChartPtr = std::shared_ptr<const LagrangianChart>;

inline LagrangianChartPtr build_lagrangian_chart(const ControlSystem& sys,
                                                 const Trajectory& reference,
                                                 const std::string& base_chart_id,
                                                 double radius) {
  auto lc = std::make_shared<LagrangianChart>();
  lc->manifold = sys.manifold;
  lc->base_chart = sys.manifold->chart_index(base_chart_id);
  lc->radius = radius;
  for (const auto& p : reference.pieces) {
    if (p.chart != lc->base_chart)
      throw TubeEscape("reference trajectory leaves the Lagrangian base chart");
    lc->reference.push_back(p);
  }
  lc->x0_star = reference.states.front().coords;
  return lc;
}

// ---------------------------------------------------------------------------
// Reduced system g(t, x, u) = (psi_t* f)(t, x, u) - (psi_t* V_t)(x)
// ---------------------------------------------------------------------------

struct BoundCertificate {
  Vec time_grid;
  Vec m_env;  // envelope of max(|g|, |g_x|)
  Vec k_env;  // Lipschitz envelope of g and g_x
  double m_l1 = 0.0;
  double k_l1 = 0.0;
  double c0 = 1.0;  // (1 + 2|m|_L1) exp(|k|_L1)
  std::size_t sample_count = 0;
  double tube_radius = 0.0;
  bool analytic = false;
};

struct ReducedSystem {
  std::shared_ptr<const ControlSystem> original;
  LagrangianChartPtr chart;
  BoundCertificate bounds;

  double horizon() const { return original->horizon; }
  const ControlSet& control_set() const { return original->control_set; }
  std::size_t dim() const { return original->manifold->dim; }
  const Vec& anchor() const { return chart->x0_star; }

  // original base-chart coordinates of a reduced state
  Vec original_coords(double t, const Vec& xhat) const {
    return xhat - chart->x0_star + chart->ref_coords(t);
  }

  Vec g(double t, const Vec& xhat, const Vec& u) const {
    Vec x = original_coords(t, xhat);
    double dev = norm(xhat - chart->x0_star);
    double c = tube_cutoff(dev / chart->radius);
    return original->field(t, chart->base_chart, x, u) - c * chart->ref_velocity(t);
  }

  Mat g_x(double t, const Vec& xhat, const Vec& u) const {
    // inside the tube the V_t term is x-independent
    Vec x = original_coords(t, xhat);
    return original->field_x(t, chart->base_chart, x, u);
  }
};

using ReducedSystemPtr = std::shared_ptr<const ReducedSystem>;

inline ReducedSystemPtr reduce(const std::shared_ptr<const ControlSystem>& sys,
                               const LagrangianChartPtr& lchart) {
  auto rs = std::make_shared<ReducedSystem>();
  rs->original = sys;
  rs->chart = lchart;
  return rs;
}

// Reduced trajectory: a plain vector ODE in the base chart image.
struct ReducedTrajectory {
  OdeSolution sol;
  double max_deviation = 0.0;  // sup over the run of |x(t) - x0*|
  bool in_open_tube = false;
  bool in_closed_tube = false;
};

inline ReducedTrajectory integrate_reduced(const ReducedSystem& rs, const Vec& xhat0,
                                           const Control& u, double tol = 1e-9) {
  OdeRhs rhs = [&rs, &u](double t, const Vec& y, Vec& dy) { dy = rs.g(t, y, u.at(t)); };
  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;
  Vec brk(u.grid.begin() + 1, u.grid.end() - 1);
  ReducedTrajectory rt;
  rt.sol = integrate_ode(rhs, 0.0, rs.horizon(), xhat0, opt, brk);
  double dev = norm(xhat0 - rs.anchor());
  for (const auto& s : rt.sol.steps) {
    for (double frac : {0.5, 1.0}) {
      Vec y = s.eval(s.t0 + frac * s.h);
      dev = std::max(dev, norm(y - rs.anchor()));
    }
  }
  rt.max_deviation = dev;
  rt.in_closed_tube = dev <= rs.chart->radius + 1e-9;
  rt.in_open_tube = dev < rs.chart->radius * (1.0 - 1e-6);
  return rt;
}

// ---------------------------------------------------------------------------
// Assumption-style bound certification (sampled envelopes)
// ---------------------------------------------------------------------------

inline double trapezoid_l1(const Vec& grid, const Vec& values) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    s += 0.5 * (std::abs(values[i]) + std::abs(values[i + 1])) * (grid[i + 1] - grid[i]);
  return s;
}

inline BoundCertificate certify_bounds(const ReducedSystem& rs, std::size_t samples,
                                       std::uint64_t seed = 0, std::size_t time_points = 33) {
  BoundCertificate cert;
  cert.sample_count = samples;
  cert.tube_radius = rs.chart->radius;
  const double T = rs.horizon();
  const std::size_t n = rs.dim();

  for (std::size_t i = 0; i < time_points; ++i)
    cert.time_grid.push_back(T * double(i) / double(time_points - 1));

  Halton hx(n, derive_seed(seed, 11));
  std::vector<Vec> pts;
  for (std::size_t i = 0; i < samples; ++i)
    pts.push_back(to_ball(hx.next(), rs.anchor(), rs.chart->radius));
  std::vector<Vec> ctrls = rs.control_set().sample(
      std::min<std::size_t>(64, std::max<std::size_t>(8, samples / 8)), derive_seed(seed, 13));
  for (const Vec& v : rs.control_set().extreme_points()) ctrls.push_back(v);

  for (double t : cert.time_grid) {
    double m = 0.0, k = 0.0;
    Vec g_prev;
    Mat gx_prev;
    Vec x_prev;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec& x = pts[i];
      for (const Vec& u : ctrls) {
        Vec gv = rs.g(t, x, u);
        Mat gxv = rs.g_x(t, x, u);
        m = std::max(m, norm(gv));
        m = std::max(m, operator_norm(gxv));
        if (i > 0) {
          double dx = norm(x - x_prev);
          if (dx > 1e-10) {
            Vec gv2 = rs.g(t, x_prev, u);
            Mat gxv2 = rs.g_x(t, x_prev, u);
            k = std::max(k, norm(gv - gv2) / dx);
            k = std::max(k, operator_norm(gxv - gxv2) / dx);
          }
        }
      }
      x_prev = x;
    }
    cert.m_env.push_back(m);
    cert.k_env.push_back(k);
  }

  cert.m_l1 = trapezoid_l1(cert.time_grid, cert.m_env);
  cert.k_l1 = trapezoid_l1(cert.time_grid, cert.k_env);
  cert.c0 = (1.0 + 2.0 * cert.m_l1) * std::exp(cert.k_l1);
  return cert;
}

// Certificate from declared constant envelopes (catalog problems with known
// analytic bounds).
inline BoundCertificate analytic_certificate(double m_const, double k_const, double horizon,
                                             double tube_radius) {
  BoundCertificate cert;
  cert.analytic = true;
  cert.tube_radius = tube_radius;
  cert.time_grid = {0.0, horizon};
  cert.m_env = {m_const, m_const};
  cert.k_env = {k_const, k_const};
  cert.m_l1 = m_const * horizon;
  cert.k_l1 = k_const * horizon;
  cert.c0 = (1.0 + 2.0 * cert.m_l1) * std::exp(cert.k_l1);
  return cert;
}

}  // namespace pmpt
