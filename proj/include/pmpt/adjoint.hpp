#pragma once

#include "pmpt/constraints.hpp"

namespace pmpt {

// Pontryagin function H(t, zeta, u) = <zeta, f(t, q, u)>.
inline double hamiltonian(const ControlSystem& sys, double t, const CotangentVector& zeta,
                          const Vec& u) {
  Vec f = sys.field(t, zeta.base.chart, zeta.base.coords, u);
  return dot(zeta.components, f);
}

// ---------------------------------------------------------------------------
// Costate trajectories
// ---------------------------------------------------------------------------

struct CostateTrajectory {
  Vec grid;                              // the base trajectory's knots
  std::vector<CotangentVector> covectors;  // one per knot, based at the states
  std::vector<TrajectoryPiece> pieces;     // backward solutions, one per chart piece

  Vec eval_components(double t) const {
    for (const auto& p : pieces)
      if (t <= p.sol.t_begin + 1e-12) return p.sol.eval(t);  // pieces run backward
    return pieces.back().sol.eval(t);
  }

  const CotangentVector& initial() const { return covectors.front(); }
  const CotangentVector& terminal() const { return covectors.back(); }
};

// Backward integration of zeta' = -(phi_* f)_x^T zeta with zeta(T) = -eta.
// Chart switches mirror the forward trajectory's (covectors pull back with
// the transposed transition jacobian).
inline CostateTrajectory integrate_costate(const ControlSystem& sys, const Trajectory& traj,
                                           const Control& u, const CotangentVector& eta,
                                           double tol = 1e-9) {
  const ChartedManifold& m = *sys.manifold;
  CostateTrajectory ct;
  ct.grid = traj.grid;

  CotangentVector eta_aligned = eta;
  if (eta.base.chart != traj.states.back().chart)
    eta_aligned = pullback_covector(m, eta, traj.states.back().chart);
  Vec z = -eta_aligned.components;

  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;

  // walk the pieces backward
  for (std::size_t pi = traj.pieces.size(); pi-- > 0;) {
    const TrajectoryPiece& piece = traj.pieces[pi];
    const int chart = piece.chart;
    OdeRhs rhs = [&](double tt, const Vec& y, Vec& dy) {
      Vec x = piece.sol.eval(tt);
      Mat a = sys.field_x(tt, chart, x, u.at(tt));
      dy = -1.0 * matTvec(a, y);
    };
    Vec brk;
    for (double g : traj.grid)
      if (g > piece.sol.t_begin + 1e-13 && g < piece.sol.t_end - 1e-13) brk.push_back(g);
    OdeSolution sol = integrate_ode(rhs, piece.sol.t_end, piece.sol.t_begin, z, opt, brk);
    z = sol.y_end;
    ct.pieces.push_back(TrajectoryPiece{chart, std::move(sol)});

    // crossing the switch that starts this piece (if any), pull the covector
    // back into the previous chart
    if (pi > 0 && traj.pieces[pi - 1].chart != chart) {
      const TrajectoryPiece& prev = traj.pieces[pi - 1];
      const ChartTransition* tr = m.find_transition(prev.chart, chart);
      if (!tr) throw OutOfDomain("costate cannot mirror the forward chart switch");
      Vec x_prev = prev.sol.y_end;
      z = matTvec(tr->jacobian(x_prev), z);
    }
  }
  std::reverse(ct.pieces.begin(), ct.pieces.end());

  for (std::size_t k = 0; k < traj.grid.size(); ++k) {
    double t = traj.grid[k];
    Vec comps = ct.eval_components(t);
    if (k == 0) comps = z;
    ct.covectors.push_back(CotangentVector{traj.states[k], comps});
  }
  return ct;
}

// ---------------------------------------------------------------------------
// Maximum-condition residuals
// ---------------------------------------------------------------------------

struct PmpResidual {
  double max_residual = 0.0;       // sup_t [max_u H - H(u_*)]
  double integral_residual = 0.0;  // time integral of the same gap
};

// Candidate controls for the inner maximization: extreme points are exact
// for control-affine fields; sampled candidates are lower bounds otherwise.
inline PmpResidual pmp_residual(const ControlSystem& sys, const Trajectory& traj,
                                const Control& u, const CostateTrajectory& costate,
                                std::size_t control_samples = 64, std::uint64_t seed = 0,
                                std::size_t time_points = 129) {
  std::vector<Vec> candidates = sys.control_set.extreme_points();
  if (!sys.control_affine)
    for (const Vec& c : sys.control_set.sample(control_samples, derive_seed(seed, 41)))
      candidates.push_back(c);

  Vec times = traj.grid;
  for (std::size_t i = 0; i < time_points; ++i)
    times.push_back(traj.t_begin() +
                    (traj.t_end() - traj.t_begin()) * double(i) / double(time_points - 1));
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-13; }),
              times.end());

  PmpResidual res;
  double prev_gap = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    double t = times[i];
    ManifoldPoint q = traj.eval(t);
    Vec zc = costate.eval_components(t);
    CotangentVector zeta{q, zc};
    double h_star = hamiltonian(sys, t, zeta, u.at(t));
    double h_best = h_star;
    for (const Vec& c : candidates) h_best = std::max(h_best, hamiltonian(sys, t, zeta, c));
    double gap = h_best - h_star;
    res.max_residual = std::max(res.max_residual, gap);
    if (i > 0) res.integral_residual += 0.5 * (times[i] - times[i - 1]) * (prev_gap + gap);
    prev_gap = gap;
  }
  return res;
}

// Pointwise maximizer of H over the control set (closed form for the
// declared families; used by indirect shooting).
inline Vec argmax_hamiltonian(const ControlSystem& sys, double t, const CotangentVector& zeta) {
  const ControlSet& cs = sys.control_set;
  switch (cs.kind) {
    case ControlSet::Kind::Finite: {
      double best = -std::numeric_limits<double>::infinity();
      Vec out = cs.values.front();
      for (const Vec& v : cs.values) {
        double h = hamiltonian(sys, t, zeta, v);
        if (h > best) {
          best = h;
          out = v;
        }
      }
      return out;
    }
    case ControlSet::Kind::Box: {
      // switching gradient d<zeta, f>/du_i by differencing the field itself:
      // the u-independent part cancels exactly, so the sign stays clean
      // arbitrarily close to a switch
      std::size_t mdim = cs.dim();
      Vec mid(mdim);
      for (std::size_t i = 0; i < mdim; ++i) mid[i] = 0.5 * (cs.lo[i] + cs.hi[i]);
      Vec out(mdim);
      for (std::size_t i = 0; i < mdim; ++i) {
        Vec up = mid, dn = mid;
        double step = std::max(1e-6, 1e-6 * (cs.hi[i] - cs.lo[i]));
        up[i] += step;
        dn[i] -= step;
        Vec df = sys.field(t, zeta.base.chart, zeta.base.coords, up) -
                 sys.field(t, zeta.base.chart, zeta.base.coords, dn);
        double grad = dot(zeta.components, df) / (2 * step);
        out[i] = grad >= 0.0 ? cs.hi[i] : cs.lo[i];
      }
      return out;
    }
    case ControlSet::Kind::Ball: {
      // H affine in u: maximize <B^T zeta, u> over the ball
      std::size_t mdim = cs.dim();
      Vec grad(mdim);
      for (std::size_t i = 0; i < mdim; ++i) {
        Vec up = cs.center, dn = cs.center;
        double step = 1e-6;
        up[i] += step;
        dn[i] -= step;
        Vec df = sys.field(t, zeta.base.chart, zeta.base.coords, up) -
                 sys.field(t, zeta.base.chart, zeta.base.coords, dn);
        grad[i] = dot(zeta.components, df) / (2 * step);
      }
      double ng = norm(grad);
      if (ng < 1e-14) return cs.center;
      return cs.center + (cs.radius / ng) * grad;
    }
  }
  return cs.clamp(zeros(cs.dim()));
}

// ---------------------------------------------------------------------------
// Transversality
// ---------------------------------------------------------------------------

// Endpoint cost differential in base-chart coordinates.
struct CostDifferential {
  Vec xi0;
  Vec xiT;
};

// Distance of (zeta(0), -zeta(T)) - lambda0 dl to the limiting normal cone
// of S, all in base-chart/product coordinates. The cone is generated at the
// nearest boundary point when the endpoints sit off the set.
inline double transversality_residual(const Vec& zeta0, const Vec& zetaT, int lambda0,
                                      const CostDifferential& dl, const EndpointSet& set,
                                      const Vec& x0_base, const Vec& xT_base) {
  Vec w0 = zeta0 - double(lambda0) * dl.xi0;
  Vec w1 = -1.0 * zetaT - double(lambda0) * dl.xiT;
  NormalCone c0 = slot_normal_cone(set.slot0, set.slot0.nearest(x0_base));
  NormalCone c1 = slot_normal_cone(set.slot1, set.slot1.nearest(xT_base));
  double d0 = c0.distance_to(w0);
  double d1 = c1.distance_to(w1);
  return std::sqrt(d0 * d0 + d1 * d1);
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

struct PmpCertificate {
  int lambda0 = 1;
  CostateTrajectory costate;
  double max_residual = 0.0;
  double integral_residual = 0.0;
  double transversality = 0.0;
  double nontriviality = 0.0;  // min_t (lambda0 + |zeta(t)|)

  bool pass(double residual_tol = 1e-6, double nontrivial_tol = 1e-8) const {
    return max_residual <= residual_tol && transversality <= residual_tol &&
           nontriviality >= nontrivial_tol;
  }
};

inline double nontriviality_margin(int lambda0, const CostateTrajectory& ct,
                                   std::size_t samples = 65) {
  double m = std::numeric_limits<double>::infinity();
  double t0 = ct.grid.front(), t1 = ct.grid.back();
  for (std::size_t i = 0; i < samples; ++i) {
    double t = t0 + (t1 - t0) * double(i) / double(samples - 1);
    m = std::min(m, double(lambda0) + norm(ct.eval_components(t)));
  }
  return m;
}

inline void export_costate_csv(const CostateTrajectory& ct, const Trajectory& traj,
                               const std::string& path, std::size_t samples = 201) {
  CsvWriter csv(path);
  std::vector<std::string> names = {"t", "chart"};
  for (std::size_t i = 1; i <= ct.covectors.front().components.size(); ++i)
    names.push_back("z" + std::to_string(i));
  csv.header(names);

  Vec times = ct.grid;
  for (std::size_t i = 0; i < samples; ++i)
    times.push_back(ct.grid.front() +
                    (ct.grid.back() - ct.grid.front()) * double(i) / double(samples - 1));
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-13; }),
              times.end());
  for (double t : times) {
    Vec row = {t, double(traj.chart_at(t))};
    for (double c : ct.eval_components(t)) row.push_back(c);
    csv.row(row);
  }
}

}  // namespace pmpt
