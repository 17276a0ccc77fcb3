#pragma once

#include "pmpt/relaxed.hpp"

namespace pmpt {

// A global variation direction: an initial tangent direction in the unit
// ball of the base chart plus a relaxed control to mix in.
struct VariationSpec {
  Vec v0;  // components in the Lagrangian base chart, |v0| <= 1
  RelaxedControl nu;

  void validate() const {
    if (norm(v0) > 1.0 + 1e-12) throw Error("variation direction outside the unit ball");
    nu.validate();
  }
};

struct VariedPair {
  ManifoldPoint q0;      // varied initial point (base chart)
  RelaxedControl mixed;  // (1-lambda) delta_u + lambda nu
};

// q0^lambda and the mixed relaxed control; lambda = 0 reproduces the pair.
inline VariedPair vary(const ControlPair& pair, const VariationSpec& spec, double lambda) {
  spec.validate();
  if (lambda < 0.0 || lambda > 1.0) throw Error("variation parameter must lie in [0,1]");
  Vec x0 = pair.x0hat() + lambda * spec.v0;
  VariedPair out;
  out.q0 = ManifoldPoint{pair.chart->base_chart, std::move(x0)};
  out.mixed = mix_with(pair.u, spec.nu, lambda);
  return out;
}

inline ReducedTrajectory integrate_varied(const ReducedSystem& rs, const ControlPair& pair,
                                          const VariationSpec& spec, double lambda,
                                          double tol = 1e-9) {
  VariedPair vp = vary(pair, spec, lambda);
  return integrate_reduced_relaxed(rs, vp.q0.coords, vp.mixed, tol);
}

// ---------------------------------------------------------------------------
// Endpoint derivative (v0, v1) of the variation family
// ---------------------------------------------------------------------------

struct EndpointDerivative {
  Vec v0;  // psi_0-image components at the initial point
  Vec v1;  // psi_T-image components at the terminal point
};

// One inhomogeneous variational sweep along the unvaried trajectory:
//   v' = g_x(t, x, u) v + [g_hat(t, x, nu) - g(t, x, u)],   v(0) = v0.
inline EndpointDerivative endpoint_derivative(const ControlPair& pair, const VariationSpec& spec,
                                              const ReducedSystem& rs, double tol = 1e-9) {
  spec.validate();
  if (!pair.reduced.in_open_tube)
    throw TubeEscape("endpoint derivative needs a pair in the open tube");

  Vec knots = pair.u.grid;
  for (const auto& a : spec.nu.atoms) knots = merge_grids(knots, a.control.grid);

  OdeRhs rhs = [&](double t, const Vec& y, Vec& dy) {
    Vec x = pair.reduced.sol.eval(t);
    const Vec& u = pair.u.at(t);
    dy = matvec(rs.g_x(t, x, u), y) + relaxed_g(rs, t, x, spec.nu) - rs.g(t, x, u);
  };
  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;
  Vec brk(knots.begin() + 1, knots.end() - 1);
  OdeSolution sol = integrate_ode(rhs, 0.0, rs.horizon(), spec.v0, opt, brk);
  return EndpointDerivative{spec.v0, sol.y_end};
}

// ---------------------------------------------------------------------------
// Rate certificates
// ---------------------------------------------------------------------------

struct RateCertificate {
  Vec lambdas;
  Vec deviations;
  Vec bounds;
  double fitted_slope = std::numeric_limits<double>::quiet_NaN();
  double constant = 0.0;  // c0 or the assembled second-order constant
  bool pass = false;
  bool degenerate = false;            // all deviations below the measurement floor
  std::vector<double> skipped_lambdas;  // removed for tube escape
};

namespace detail {

inline double fit_loglog_slope(const Vec& xs, const Vec& ys, double floor) {
  Vec lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (ys[i] > floor) {
      lx.push_back(std::log(xs[i]));
      ly.push_back(std::log(ys[i]));
    }
  if (lx.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= double(lx.size());
  my /= double(lx.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  return den > 0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

inline Vec default_lambda_grid() {
  Vec l;
  for (int k = 3; k <= 10; ++k) l.push_back(std::pow(2.0, -k));
  return l;
}

inline double sup_distance(const OdeSolution& a, const OdeSolution& b, const Vec& knots,
                           std::size_t uniform = 256) {
  double t0 = a.t_begin, t1 = a.t_end;
  Vec grid = knots;
  for (std::size_t i = 0; i <= uniform; ++i)
    grid.push_back(t0 + (t1 - t0) * double(i) / double(uniform));
  std::sort(grid.begin(), grid.end());
  double d = 0.0;
  for (double t : grid) d = std::max(d, norm(a.eval(t) - b.eval(t)));
  return d;
}

}  // namespace detail

// Linear-rate certificate: sup_t |x^lambda(t) - x^0(t)| <= c0 lambda.
inline RateCertificate linear_rate_certificate(const ControlPair& pair,
                                               const VariationSpec& spec,
                                               const ReducedSystem& rs,
                                               const BoundCertificate& cert,
                                               Vec lambda_list = {}, double tol = 1e-9) {
  if (lambda_list.empty()) lambda_list = detail::default_lambda_grid();
  RateCertificate rc;
  rc.constant = cert.c0;

  Vec knots = pair.u.grid;
  for (const auto& a : spec.nu.atoms) knots = merge_grids(knots, a.control.grid);

  for (double lam : lambda_list) {
    ReducedTrajectory varied;
    try {
      varied = integrate_varied(rs, pair, spec, lam, tol);
    } catch (const TubeEscape&) {
      rc.skipped_lambdas.push_back(lam);
      continue;
    }
    if (!varied.in_closed_tube) {
      rc.skipped_lambdas.push_back(lam);
      continue;
    }
    double dev = detail::sup_distance(varied.sol, pair.reduced.sol, knots);
    rc.lambdas.push_back(lam);
    rc.deviations.push_back(dev);
    rc.bounds.push_back(cert.c0 * lam);
  }

  const double floor = 50.0 * tol;
  rc.fitted_slope = detail::fit_loglog_slope(rc.lambdas, rc.deviations, floor);
  rc.degenerate = true;
  for (double d : rc.deviations)
    if (d > floor) rc.degenerate = false;
  rc.pass = !rc.lambdas.empty();
  for (std::size_t i = 0; i < rc.lambdas.size(); ++i)
    if (rc.deviations[i] > rc.bounds[i] + 1e-12) rc.pass = false;
  return rc;
}

// Second-order certificate: the defect of the linearized endpoint,
// |x^lambda(T) - x^0(T) - lambda v1|, stays under the assembled Gronwall
// constant times lambda^2.
inline RateCertificate second_order_certificate(const ControlPair& pair,
                                                const VariationSpec& spec,
                                                const ReducedSystem& rs,
                                                const BoundCertificate& cert,
                                                Vec lambda_list = {}, double tol = 1e-9) {
  if (lambda_list.empty()) lambda_list = detail::default_lambda_grid();
  RateCertificate rc;
  const double c3 = (0.5 * cert.k_l1 * cert.c0 * cert.c0 + cert.c0 * cert.k_l1) *
                    std::exp(cert.m_l1);
  rc.constant = c3;

  EndpointDerivative ed = endpoint_derivative(pair, spec, rs, tol);
  Vec xT = pair.reduced.sol.y_end;

  for (double lam : lambda_list) {
    ReducedTrajectory varied;
    try {
      varied = integrate_varied(rs, pair, spec, lam, tol);
    } catch (const TubeEscape&) {
      rc.skipped_lambdas.push_back(lam);
      continue;
    }
    if (!varied.in_closed_tube) {
      rc.skipped_lambdas.push_back(lam);
      continue;
    }
    double defect = norm(varied.sol.y_end - xT - lam * ed.v1);
    rc.lambdas.push_back(lam);
    rc.deviations.push_back(defect);
    rc.bounds.push_back(10.0 * c3 * lam * lam);
  }

  const double floor = 50.0 * tol;
  rc.fitted_slope = detail::fit_loglog_slope(rc.lambdas, rc.deviations, floor);
  rc.degenerate = true;
  for (double d : rc.deviations)
    if (d > floor) rc.degenerate = false;
  rc.pass = !rc.lambdas.empty();
  for (std::size_t i = 0; i < rc.lambdas.size(); ++i)
    if (rc.deviations[i] > rc.bounds[i] + floor) rc.pass = false;
  return rc;
}

// ---------------------------------------------------------------------------
// Ordinary-control realization of a variation
// ---------------------------------------------------------------------------

struct RealizedVariation {
  ManifoldPoint q0;
  Control control;
  double sup_error = 0.0;  // against the relaxed variation, reduced sup norm
  double rho = 0.0;        // pseudometric distance to the unvaried pair
  std::size_t blocks_used = 0;
};

// Realizes the mixed control (1-lambda) delta_u + lambda nu as an ordinary
// control from the varied initial point. Control-affine systems with a
// convex control set admit the exact averaged realization; otherwise the
// chattering construction is used with tolerance eps.
inline RealizedVariation approximate_variation(const ControlPair& pair,
                                               const VariationSpec& spec, double lambda,
                                               double eps, const ReducedSystem& rs,
                                               double tol = 1e-9) {
  if (!pair.reduced.in_open_tube) throw TubeEscape("variation base pair not in the open tube");
  VariedPair vp = vary(pair, spec, lambda);

  RealizedVariation out;
  out.q0 = vp.q0;

  if (lambda == 0.0) {
    out.control = pair.u;
    out.sup_error = 0.0;
    out.rho = 0.0;
    return out;
  }

  if (rs.original->control_affine && rs.control_set().convex()) {
    Vec grid = {0.0, rs.horizon()};
    for (const auto& a : vp.mixed.atoms) grid = merge_grids(grid, a.control.grid);
    Control w;
    w.grid = grid;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      double mid = 0.5 * (grid[i] + grid[i + 1]);
      Vec v = zeros(rs.control_set().dim());
      for (const auto& a : vp.mixed.atoms) v += a.weight * a.control.at(mid);
      w.values.push_back(rs.control_set().clamp(v));
    }
    ReducedTrajectory relx = integrate_reduced_relaxed(rs, vp.q0.coords, vp.mixed, tol);
    ReducedTrajectory real = integrate_reduced(rs, vp.q0.coords, w, tol);
    out.sup_error = detail::sup_distance(relx.sol, real.sol, grid);
    out.control = std::move(w);
  } else {
    RelaxedApproximation approx = approximate_relaxed(rs, vp.q0.coords, vp.mixed, eps, tol);
    out.sup_error = approx.achieved_error;
    out.blocks_used = approx.blocks_used;
    out.control = std::move(approx.control);
  }

  ControlPair realized = make_control_pair(rs, out.q0, out.control, tol);
  out.rho = pseudometric(realized, pair, rs);
  return out;
}

// ---------------------------------------------------------------------------
// Directional difference quotient of an endpoint cost
// ---------------------------------------------------------------------------

using EndpointCost = std::function<double(const Vec& x0hat, const Vec& xThat)>;

struct DirectionalQuotient {
  double estimate = 0.0;
  double dispersion = 0.0;
  bool converged = false;
  Vec lambdas;
  Vec quotients;
};

// Extrapolates [cost(endpoints(lambda)) - cost(endpoints(0))]/lambda to
// lambda -> 0 over the admissible part of the grid.
inline DirectionalQuotient directional_quotient(const EndpointCost& cost, const ControlPair& pair,
                                                const VariationSpec& spec,
                                                const ReducedSystem& rs, Vec lambda_list = {},
                                                double tol = 1e-9,
                                                double converge_tol = 1e-2) {
  if (lambda_list.empty()) lambda_list = detail::default_lambda_grid();
  std::sort(lambda_list.rbegin(), lambda_list.rend());  // descending

  DirectionalQuotient dq;
  const double base = cost(pair.x0hat(), pair.reduced.sol.y_end);

  for (double lam : lambda_list) {
    ReducedTrajectory varied;
    try {
      varied = integrate_varied(rs, pair, spec, lam, tol);
    } catch (const TubeEscape&) {
      continue;
    }
    if (!varied.in_closed_tube) continue;
    double q = (cost(varied.sol.y_begin, varied.sol.y_end) - base) / lam;
    dq.lambdas.push_back(lam);
    dq.quotients.push_back(q);
  }
  if (dq.quotients.empty()) {
    dq.converged = false;
    return dq;
  }
  if (dq.quotients.size() == 1) {
    dq.estimate = dq.quotients.front();
    dq.dispersion = std::numeric_limits<double>::infinity();
    dq.converged = false;
    return dq;
  }
  // Richardson step on the two smallest lambdas (grid is near-geometric),
  // dispersion from the tail spread.
  std::size_t m = dq.quotients.size();
  double q1 = dq.quotients[m - 1], q2 = dq.quotients[m - 2];
  double l1 = dq.lambdas[m - 1], l2 = dq.lambdas[m - 2];
  double r = l2 / l1;
  dq.estimate = (r * q1 - q2) / (r - 1.0);
  dq.dispersion = std::abs(q1 - q2);
  if (m >= 3) dq.dispersion = std::max(dq.dispersion, std::abs(q2 - dq.quotients[m - 3]));
  dq.converged = dq.dispersion <= converge_tol * std::max(1.0, std::abs(dq.estimate));
  return dq;
}

}  // namespace pmpt
