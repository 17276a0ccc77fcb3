#pragma once

#include "pmpt/lagrangian.hpp"

namespace pmpt {

// ---------------------------------------------------------------------------
// Relaxed controls: finite convex combinations of ordinary controls
// ---------------------------------------------------------------------------

struct RelaxedControl {
  struct Atom {
    double weight = 0.0;
    Control control;
  };
  std::vector<Atom> atoms;

  void validate() const {
    double s = 0.0;
    for (const auto& a : atoms) {
      if (a.weight <= 0.0) throw Error("relaxed control: nonpositive atom weight");
      s += a.weight;
    }
    if (std::abs(s - 1.0) > 1e-10) throw Error("relaxed control: weights do not sum to 1");
  }
};

inline RelaxedControl dirac(Control u) { return RelaxedControl{{{1.0, std::move(u)}}}; }

inline RelaxedControl mix(double w1, Control u1, double w2, Control u2) {
  return RelaxedControl{{{w1, std::move(u1)}, {w2, std::move(u2)}}};
}

// (1-lambda) delta_u + lambda nu
inline RelaxedControl mix_with(const Control& u, const RelaxedControl& nu, double lambda) {
  RelaxedControl out;
  if (lambda < 1.0) out.atoms.push_back({1.0 - lambda, u});
  if (lambda > 0.0)
    for (const auto& a : nu.atoms) out.atoms.push_back({lambda * a.weight, a.control});
  return out;
}

inline TangentVector evaluate_relaxed_field(const ControlSystem& sys, double t,
                                            const ManifoldPoint& q, const RelaxedControl& nu) {
  Vec v = zeros(sys.manifold->dim);
  for (const auto& a : nu.atoms) v += a.weight * sys.field(t, q.chart, q.coords, a.control.at(t));
  return TangentVector{q, v};
}

inline Vec relaxed_g(const ReducedSystem& rs, double t, const Vec& xhat,
                     const RelaxedControl& nu) {
  Vec v = zeros(rs.dim());
  for (const auto& a : nu.atoms) v += a.weight * rs.g(t, xhat, a.control.at(t));
  return v;
}

inline Mat relaxed_g_x(const ReducedSystem& rs, double t, const Vec& xhat,
                       const RelaxedControl& nu) {
  Mat m(rs.dim(), rs.dim());
  for (const auto& a : nu.atoms) m = m + a.weight * rs.g_x(t, xhat, a.control.at(t));
  return m;
}

// Reduced trajectory of a relaxed control.
inline ReducedTrajectory integrate_reduced_relaxed(const ReducedSystem& rs, const Vec& xhat0,
                                                   const RelaxedControl& nu, double tol = 1e-9) {
  Vec knots = {0.0, rs.horizon()};
  for (const auto& a : nu.atoms) knots = merge_grids(knots, a.control.grid);
  OdeRhs rhs = [&rs, &nu](double t, const Vec& y, Vec& dy) { dy = relaxed_g(rs, t, y, nu); };
  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;
  Vec brk(knots.begin() + 1, knots.end() - 1);
  ReducedTrajectory rt;
  rt.sol = integrate_ode(rhs, 0.0, rs.horizon(), xhat0, opt, brk);
  double dev = norm(xhat0 - rs.anchor());
  for (const auto& s : rt.sol.steps)
    for (double frac : {0.5, 1.0})
      dev = std::max(dev, norm(s.eval(s.t0 + frac * s.h) - rs.anchor()));
  rt.max_deviation = dev;
  rt.in_closed_tube = dev <= rs.chart->radius + 1e-9;
  rt.in_open_tube = dev < rs.chart->radius * (1.0 - 1e-6);
  return rt;
}

// ---------------------------------------------------------------------------
// Chattering partition (uniform knots, per-block interval construction)
// ---------------------------------------------------------------------------

struct ChatteringPartition {
  Vec partition_knots;  // r+1 uniform knots
  // blocks[i]: the union of intervals assigned to atom i (original indexing)
  std::vector<std::vector<std::pair<double, double>>> blocks;
  double diameter = 0.0;
  std::vector<std::size_t> dropped_atoms;  // weights below 1e-12, renormalized away

  double block_measure(std::size_t atom) const {
    double s = 0.0;
    for (auto [a, b] : blocks[atom]) s += b - a;
    return s;
  }
};

inline ChatteringPartition chattering_partition(const Vec& weights, std::size_t r, double T) {
  if (r < 1) throw Error("chattering partition needs at least one block");
  ChatteringPartition part;
  part.blocks.resize(weights.size());

  Vec w = weights;
  double kept = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] < 1e-12) {
      part.dropped_atoms.push_back(i);
      w[i] = 0.0;
    } else {
      kept += w[i];
    }
  }
  if (kept <= 0.0) throw Error("chattering partition: all weights degenerate");
  for (double& x : w) x /= kept;

  const double dt = T / double(r);
  part.diameter = dt;
  for (std::size_t j = 0; j <= r; ++j) part.partition_knots.push_back(dt * double(j));

  for (std::size_t j = 0; j < r; ++j) {
    double t0 = part.partition_knots[j];
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) continue;
      double a = t0 + acc * dt;
      acc += w[i];
      double b = t0 + acc * dt;
      part.blocks[i].push_back({a, b});
    }
  }
  return part;
}

// ---------------------------------------------------------------------------
// Chattering error measurement
// ---------------------------------------------------------------------------

using TimeFunction = std::function<Vec(double)>;

struct ChatteringErrorResult {
  Vec per_atom;     // sup_t | int_{[0,t] ^ A_i} h_i - w_i int_0^t h_i |
  double combined;  // sup_t | sum_i (...) |, the trajectory-level error
};

namespace detail {

inline Vec chattering_grid(const ChatteringPartition& part, std::size_t per_interval) {
  Vec edges;
  for (const auto& blk : part.blocks)
    for (auto [a, b] : blk) {
      edges.push_back(a);
      edges.push_back(b);
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](double x, double y) { return std::abs(x - y) < 1e-14; }),
              edges.end());
  Vec grid;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    for (std::size_t k = 0; k < per_interval; ++k)
      grid.push_back(edges[i] + (edges[i + 1] - edges[i]) * double(k) / double(per_interval));
  }
  grid.push_back(edges.back());
  return grid;
}

}  // namespace detail

// Evaluates, over a fine grid refining every block edge, the running error
// between the block-restricted and the weight-scaled integrals of each h_i.
inline ChatteringErrorResult chattering_error(const std::vector<TimeFunction>& h,
                                              const Vec& weights,
                                              const ChatteringPartition& part,
                                              std::size_t per_interval = 16) {
  if (per_interval < 1) throw GridTooCoarse("need at least one point per block interval");
  const Vec grid = detail::chattering_grid(part, per_interval);
  const std::size_t n = h.size();

  // normalized weights as the partition used them
  Vec w = weights;
  double kept = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    bool dropped = std::find(part.dropped_atoms.begin(), part.dropped_atoms.end(), i) !=
                   part.dropped_atoms.end();
    if (dropped)
      w[i] = 0.0;
    else
      kept += w[i];
  }
  for (double& x : w) x /= kept;

  auto in_block = [&part](std::size_t atom, double t) {
    for (auto [a, b] : part.blocks[atom])
      if (t >= a - 1e-13 && t <= b + 1e-13) return true;
    return false;
  };

  ChatteringErrorResult res;
  res.per_atom.assign(n, 0.0);
  res.combined = 0.0;

  std::vector<Vec> full_acc(n), block_acc(n);
  std::vector<Vec> h_prev(n);
  for (std::size_t i = 0; i < n; ++i) {
    h_prev[i] = h[i](grid[0]);
    full_acc[i] = zeros(h_prev[i].size());
    block_acc[i] = zeros(h_prev[i].size());
  }

  Vec combined_err(full_acc[0].size(), 0.0);
  for (std::size_t gidx = 0; gidx + 1 <= grid.size(); ++gidx) {
    if (gidx > 0) {
      double a = grid[gidx - 1], b = grid[gidx];
      double mid = 0.5 * (a + b);
      for (std::size_t i = 0; i < n; ++i) {
        Vec hb = h[i](b);
        Vec inc = 0.5 * (b - a) * (h_prev[i] + hb);
        full_acc[i] += inc;
        if (in_block(i, mid)) block_acc[i] += inc;
        h_prev[i] = std::move(hb);
      }
    }
    std::fill(combined_err.begin(), combined_err.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      Vec diff = block_acc[i] - w[i] * full_acc[i];
      res.per_atom[i] = std::max(res.per_atom[i], norm(diff));
      combined_err += diff;
    }
    res.combined = std::max(res.combined, norm(combined_err));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Chattered realization of a relaxed control
// ---------------------------------------------------------------------------

// Splices the atoms along the partition blocks: w(t) = u_i(t) on A_i.
inline Control splice_control(const RelaxedControl& nu, const ChatteringPartition& part) {
  Vec grid;
  for (const auto& blk : part.blocks)
    for (auto [a, b] : blk) {
      grid.push_back(a);
      grid.push_back(b);
    }
  for (const auto& a : nu.atoms) grid = merge_grids(grid, a.control.grid);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(),
                         [](double x, double y) { return std::abs(x - y) < 1e-14; }),
             grid.end());

  auto atom_at = [&](double t) -> std::size_t {
    for (std::size_t i = 0; i < part.blocks.size(); ++i)
      for (auto [a, b] : part.blocks[i])
        if (t >= a - 1e-13 && t <= b + 1e-13) return i;
    return 0;
  };

  Control w;
  w.grid = grid;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    double mid = 0.5 * (grid[i] + grid[i + 1]);
    std::size_t atom = atom_at(mid);
    w.values.push_back(nu.atoms[atom].control.at(mid));
  }
  return w;
}

struct RelaxedApproximation {
  Control control;
  double achieved_error = 0.0;
  std::size_t blocks_used = 0;  // r of the accepted partition
};

// Doubles the block count until the reduced chattered trajectory tracks the
// reduced relaxed trajectory within eps in sup norm.
inline RelaxedApproximation approximate_relaxed(const ReducedSystem& rs, const Vec& xhat0,
                                                const RelaxedControl& nu, double eps,
                                                double tol = 1e-9, std::size_t r_start = 8,
                                                std::size_t r_max = 16384) {
  nu.validate();
  if (nu.atoms.size() == 1) return RelaxedApproximation{nu.atoms.front().control, 0.0, 0};

  ReducedTrajectory relaxed = integrate_reduced_relaxed(rs, xhat0, nu, tol);
  if (!relaxed.in_open_tube)
    throw TubeEscape("relaxed trajectory leaves the open tube");

  Vec weights;
  for (const auto& a : nu.atoms) weights.push_back(a.weight);

  for (std::size_t r = r_start; r <= r_max; r *= 2) {
    ChatteringPartition part = chattering_partition(weights, r, rs.horizon());
    Control w = splice_control(nu, part);
    ReducedTrajectory chat = integrate_reduced(rs, xhat0, w, tol);
    if (!chat.in_closed_tube) continue;  // finer partitions track closer

    // sup distance over block edges, control knots, and midpoints
    Vec probe = w.grid;
    for (std::size_t i = 0; i + 1 < w.grid.size(); ++i)
      probe.push_back(0.5 * (w.grid[i] + w.grid[i + 1]));
    std::sort(probe.begin(), probe.end());
    double err = 0.0;
    for (double t : probe) err = std::max(err, norm(relaxed.sol.eval(t) - chat.sol.eval(t)));
    if (err < eps) return RelaxedApproximation{std::move(w), err, r};
  }
  throw BudgetExceeded("chattering block budget exhausted before reaching the tolerance");
}

// ---------------------------------------------------------------------------
// Control pairs and the pseudometric
// ---------------------------------------------------------------------------

struct ControlPair {
  ManifoldPoint q0;
  Control u;
  LagrangianChartPtr chart;
  ReducedTrajectory reduced;

  const Vec& x0hat() const { return reduced.sol.y_begin; }
  Vec terminal() const { return reduced.sol.y_end; }
};

inline ControlPair make_control_pair(const ReducedSystem& rs, const ManifoldPoint& q0,
                                     Control u, double tol = 1e-9) {
  ControlPair p;
  p.q0 = q0;
  p.chart = rs.chart;
  Vec xhat0 = rs.chart->psi(0.0, q0);
  p.reduced = integrate_reduced(rs, xhat0, u, tol);
  p.u = std::move(u);
  return p;
}

// rho(a, b): initial-coordinate distance plus the L1 distances of g and g_x
// along the two reduced trajectories. Fixed trapezoid nodes (uniform grid
// merged with both control grids and any extra knots) keep evaluations
// comparable across pairs.
inline double pseudometric(const ControlPair& a, const ControlPair& b, const ReducedSystem& rs,
                           std::size_t nodes = 4096, const Vec& extra_knots = {}) {
  if (a.chart != b.chart || a.chart != rs.chart)
    throw ChartMismatch("pseudometric requires pairs on the same Lagrangian chart");
  const double T = rs.horizon();
  Vec grid;
  for (std::size_t i = 0; i <= nodes; ++i) grid.push_back(T * double(i) / double(nodes));
  grid = merge_grids(grid, a.u.grid);
  grid = merge_grids(grid, b.u.grid);
  if (!extra_knots.empty()) grid = merge_grids(grid, extra_knots);

  double term1 = norm(a.x0hat() - b.x0hat());
  double term2 = 0.0, term3 = 0.0;
  double prev_g = 0.0, prev_gx = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double t = grid[i];
    Vec xa = a.reduced.sol.eval(t), xb = b.reduced.sol.eval(t);
    const Vec& ua = a.u.at(t);
    const Vec& ub = b.u.at(t);
    double dg = norm(rs.g(t, xa, ua) - rs.g(t, xb, ub));
    double dgx = operator_norm(rs.g_x(t, xa, ua) - rs.g_x(t, xb, ub));
    if (i > 0) {
      double dt = grid[i] - grid[i - 1];
      term2 += 0.5 * dt * (prev_g + dg);
      term3 += 0.5 * dt * (prev_gx + dgx);
    }
    prev_g = dg;
    prev_gx = dgx;
  }
  return term1 + term2 + term3;
}

}  // namespace pmpt
