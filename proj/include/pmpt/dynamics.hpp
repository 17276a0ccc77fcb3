#pragma once

#include <algorithm>
#include <functional>

#include "pmpt/csv.hpp"
#include "pmpt/geometry.hpp"
#include "pmpt/ode.hpp"

namespace pmpt {

// ---------------------------------------------------------------------------
// Control sets and controls
// ---------------------------------------------------------------------------

struct ControlSet {
  enum class Kind { Finite, Box, Ball };
  Kind kind = Kind::Box;

  std::vector<Vec> values;  // Finite
  Vec lo, hi;               // Box
  Vec center;               // Ball
  double radius = 1.0;

  std::size_t dim() const {
    switch (kind) {
      case Kind::Finite: return values.empty() ? 0 : values.front().size();
      case Kind::Box: return lo.size();
      case Kind::Ball: return center.size();
    }
    return 0;
  }

  bool contains(const Vec& u, double tol = 1e-9) const {
    switch (kind) {
      case Kind::Finite:
        for (const Vec& v : values)
          if (norm(u - v) <= tol) return true;
        return false;
      case Kind::Box:
        for (std::size_t i = 0; i < u.size(); ++i)
          if (u[i] < lo[i] - tol || u[i] > hi[i] + tol) return false;
        return true;
      case Kind::Ball:
        return norm(u - center) <= radius + tol;
    }
    return false;
  }

  bool convex() const { return kind != Kind::Finite; }

  Vec clamp(Vec u) const {
    switch (kind) {
      case Kind::Finite: {
        double best = std::numeric_limits<double>::infinity();
        Vec out = u;
        for (const Vec& v : values) {
          double d = norm(u - v);
          if (d < best) {
            best = d;
            out = v;
          }
        }
        return out;
      }
      case Kind::Box:
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::clamp(u[i], lo[i], hi[i]);
        return u;
      case Kind::Ball: {
        Vec d = u - center;
        double nd = norm(d);
        if (nd <= radius) return u;
        return center + (radius / nd) * d;
      }
    }
    return u;
  }

  // Representative extreme values: finite values, box vertices (capped),
  // ball axis points. Used for Hamiltonian maximization and as variation
  // atoms.
  std::vector<Vec> extreme_points() const {
    std::vector<Vec> out;
    switch (kind) {
      case Kind::Finite: return values;
      case Kind::Box: {
        std::size_t n = lo.size();
        if (n <= 10) {
          for (std::size_t mask = 0; mask < (std::size_t(1) << n); ++mask) {
            Vec v(n);
            for (std::size_t i = 0; i < n; ++i) v[i] = (mask >> i) & 1 ? hi[i] : lo[i];
            out.push_back(std::move(v));
          }
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            Vec v = lo;
            v[i] = hi[i];
            out.push_back(v);
          }
          out.push_back(lo);
          out.push_back(hi);
        }
        return out;
      }
      case Kind::Ball: {
        std::size_t n = center.size();
        for (std::size_t i = 0; i < n; ++i) {
          Vec p = center, q = center;
          p[i] += radius;
          q[i] -= radius;
          out.push_back(p);
          out.push_back(q);
        }
        return out;
      }
    }
    return out;
  }

  // Deterministic scrambled low-discrepancy samples covering the set.
  std::vector<Vec> sample(std::size_t count, std::uint64_t seed) const {
    std::vector<Vec> out;
    if (kind == Kind::Finite) {
      for (std::size_t i = 0; i < count; ++i) out.push_back(values[i % values.size()]);
      return out;
    }
    Halton h(dim(), seed);
    for (std::size_t i = 0; i < count; ++i) {
      Vec p = h.next();
      out.push_back(kind == Kind::Box ? to_box(p, lo, hi) : to_ball(p, center, radius));
    }
    return out;
  }
};

inline ControlSet box_set(Vec lo, Vec hi) {
  ControlSet s;
  s.kind = ControlSet::Kind::Box;
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  return s;
}
inline ControlSet finite_set(std::vector<Vec> values) {
  ControlSet s;
  s.kind = ControlSet::Kind::Finite;
  s.values = std::move(values);
  return s;
}
inline ControlSet ball_set(Vec center, double radius) {
  ControlSet s;
  s.kind = ControlSet::Kind::Ball;
  s.center = std::move(center);
  s.radius = radius;
  return s;
}

// Piecewise-constant control on a declared grid; value i applies on
// [grid[i], grid[i+1]).
struct Control {
  Vec grid;
  std::vector<Vec> values;

  const Vec& at(double t) const {
    if (t <= grid.front()) return values.front();
    if (t >= grid.back()) return values.back();
    auto it = std::upper_bound(grid.begin(), grid.end(), t);
    std::size_t i = std::size_t(it - grid.begin()) - 1;
    return values[std::min(i, values.size() - 1)];
  }

  double horizon() const { return grid.back(); }
};

inline Control constant_control(Vec u, double horizon) {
  return Control{Vec{0.0, horizon}, {std::move(u)}};
}

inline Control uniform_control(std::vector<Vec> values, double horizon) {
  std::size_t n = values.size();
  Vec grid(n + 1);
  for (std::size_t i = 0; i <= n; ++i) grid[i] = horizon * double(i) / double(n);
  return Control{std::move(grid), std::move(values)};
}

inline Vec merge_grids(const Vec& a, const Vec& b) {
  Vec out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  out.erase(std::unique(out.begin(), out.end(),
                        [](double x, double y) { return std::abs(x - y) < 1e-14; }),
            out.end());
  return out;
}

// Rewrites u on a refined grid (values unchanged as a function of t).
inline Control refine_control(const Control& u, const Vec& grid) {
  Control out;
  out.grid = merge_grids(u.grid, grid);
  for (std::size_t i = 0; i + 1 < out.grid.size(); ++i)
    out.values.push_back(u.at(0.5 * (out.grid[i] + out.grid[i + 1])));
  return out;
}

// ---------------------------------------------------------------------------
// Control systems
// ---------------------------------------------------------------------------

// f expressed in chart coordinates; field(t, chart, x, u) is the local
// coordinate expression of the vector field.
struct ControlSystem {
  ManifoldPtr manifold;
  std::function<Vec(double t, int chart, const Vec& x, const Vec& u)> field;
  std::function<Mat(double t, int chart, const Vec& x, const Vec& u)> field_x;
  ControlSet control_set;
  double horizon = 1.0;
  bool control_affine = false;
};

inline TangentVector eval_field(const ControlSystem& sys, double t, const ManifoldPoint& q,
                                const Vec& u) {
  return TangentVector{q, sys.field(t, q.chart, q.coords, u)};
}

// Central finite-difference state derivative for systems without an
// analytic one.
inline std::function<Mat(double, int, const Vec&, const Vec&)> make_fd_field_x(
    std::function<Vec(double, int, const Vec&, const Vec&)> field, double step = 1e-6) {
  return [field, step](double t, int chart, const Vec& x, const Vec& u) {
    Mat j(x.size(), x.size());
    for (std::size_t c = 0; c < x.size(); ++c) {
      Vec xp = x, xm = x;
      xp[c] += step;
      xm[c] -= step;
      Vec fp = field(t, chart, xp, u), fm = field(t, chart, xm, u);
      for (std::size_t r = 0; r < x.size(); ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * step);
    }
    return j;
  };
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

struct ChartSwitchEvent {
  double t = 0.0;
  int from = -1;
  int to = -1;
};

struct TrajectoryPiece {
  int chart = -1;
  OdeSolution sol;  // forward in time over [sol.t_begin, sol.t_end]
};

struct Trajectory {
  Vec grid;                          // control knots spanning [0, T]
  std::vector<ManifoldPoint> states;  // state at each knot
  std::vector<TrajectoryPiece> pieces;
  std::vector<ChartSwitchEvent> switches;
  double tol = 1e-9;

  double t_begin() const { return grid.front(); }
  double t_end() const { return grid.back(); }

  const TrajectoryPiece& piece_at(double t) const {
    for (const auto& p : pieces)
      if (t <= p.sol.t_end + 1e-12) return p;
    return pieces.back();
  }

  ManifoldPoint eval(double t) const {
    const TrajectoryPiece& p = piece_at(t);
    return ManifoldPoint{p.chart, p.sol.eval(t)};
  }

  int chart_at(double t) const { return piece_at(t).chart; }
};

namespace detail {

// Tries to move x to a better chart once it drifts toward the domain edge.
// Returns the chosen chart (possibly unchanged).
inline int maybe_switch_chart(const ChartedManifold& m, int chart, Vec& x) {
  double r = m.charts[std::size_t(chart)].radius;
  if (!(norm(x) > 0.8 * r)) return chart;
  int best = chart;
  double best_norm = norm(x);
  Vec best_x = x;
  for (const auto& tr : m.transitions) {
    if (tr.from != chart) continue;
    Vec y;
    try {
      y = tr.map(x);
    } catch (const Error&) {
      continue;
    }
    if (!m.in_domain(tr.to, y)) continue;
    if (norm(y) < 0.8 * best_norm) {
      best = tr.to;
      best_norm = norm(y);
      best_x = y;
    }
  }
  x = best_x;
  return best;
}

}  // namespace detail

// Integrates the control system from q0 under u. Control knots are forced
// breakpoints; charts switch automatically when coordinates approach the
// domain edge.
inline Trajectory integrate(const ControlSystem& sys, const ManifoldPoint& q0, const Control& u,
                            double tol = 1e-9) {
  const ChartedManifold& m = *sys.manifold;
  if (u.grid.front() > 1e-12 || u.grid.back() < sys.horizon - 1e-12)
    throw Error("control grid does not span the horizon");
  if (u.values.size() + 1 != u.grid.size())
    throw Error("control needs one more grid knot than values");
  for (const Vec& v : u.values)
    if (!sys.control_set.contains(v, 1e-7))
      throw Error("control value outside the control set");

  Trajectory traj;
  traj.tol = tol;
  traj.grid = u.grid;
  if (std::abs(traj.grid.back() - sys.horizon) > 1e-12) traj.grid.back() = sys.horizon;

  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;

  int chart = q0.chart;
  Vec x = q0.coords;
  traj.states.push_back(ManifoldPoint{chart, x});

  for (std::size_t k = 0; k + 1 < traj.grid.size(); ++k) {
    double a = traj.grid[k], b = traj.grid[k + 1];
    const Vec& uk = u.values[std::min(k, u.values.size() - 1)];
    double t = a;
    while (t < b - 1e-13) {
      int cur = chart;
      OdeRhs rhs = [&sys, cur, &uk](double tt, const Vec& y, Vec& dy) {
        dy = sys.field(tt, cur, y, uk);
      };
      OdeSolution sol = integrate_ode(rhs, t, b, x, opt);

      // scan for domain escape; truncate at the first offending step end
      std::size_t cut = sol.steps.size();
      bool escaped = false;
      for (std::size_t i = 0; i < sol.steps.size(); ++i) {
        Vec ye = sol.steps[i].eval(sol.steps[i].t0 + sol.steps[i].h);
        double r = m.charts[std::size_t(cur)].radius;
        if (norm(ye) > 0.8 * r) {
          cut = i + 1;
          escaped = true;
          break;
        }
      }
      if (!escaped) {
        x = sol.y_end;
        t = b;
        traj.pieces.push_back(TrajectoryPiece{cur, std::move(sol)});
      } else {
        OdeSolution part;
        part.t_begin = sol.t_begin;
        part.y_begin = sol.y_begin;
        part.steps.assign(sol.steps.begin(), sol.steps.begin() + long(cut));
        part.t_end = part.steps.back().t0 + part.steps.back().h;
        part.y_end = part.steps.back().eval(part.t_end);
        t = part.t_end;
        x = part.y_end;
        traj.pieces.push_back(TrajectoryPiece{cur, std::move(part)});

        int next = detail::maybe_switch_chart(m, cur, x);
        if (next != cur) {
          traj.switches.push_back(ChartSwitchEvent{t, cur, next});
          chart = next;
        } else if (!m.in_domain(cur, x)) {
          throw BlowUp("trajectory left the chart domain with no overlapping chart");
        }
      }
      if (!all_finite(x)) throw NonFiniteState("trajectory state not finite");
    }
    traj.states.push_back(ManifoldPoint{chart, x});
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Variational flow Q_{0,t*} v0 along a trajectory
// ---------------------------------------------------------------------------

struct TangentFlow {
  std::vector<TangentVector> at_knots;
  std::vector<TrajectoryPiece> pieces;  // linear ODE solutions per chart piece

  Vec eval_components(double t) const {
    for (const auto& p : pieces)
      if (t <= p.sol.t_end + 1e-12) return p.sol.eval(t);
    return pieces.back().sol.eval(t);
  }
};

// Solves v' = (phi_* f)_x(t, x(t), u(t)) v along traj; chart switches apply
// the transition jacobian to v.
inline TangentFlow variational_flow(const ControlSystem& sys, const Trajectory& traj,
                                    const TangentVector& v0, const Control& u,
                                    double tol = 1e-9) {
  const ChartedManifold& m = *sys.manifold;
  TangentFlow flow;
  Vec v = v0.components;
  if (v0.base.chart != traj.states.front().chart)
    v = pushforward_vector(m, v0, traj.states.front().chart).components;

  OdeOptions opt;
  opt.abs_tol = tol;
  opt.rel_tol = tol;

  std::size_t switch_idx = 0;
  for (const auto& piece : traj.pieces) {
    const int chart = piece.chart;
    OdeRhs rhs = [&](double tt, const Vec& y, Vec& dy) {
      Vec x = piece.sol.eval(tt);
      dy = matvec(sys.field_x(tt, chart, x, u.at(tt)), y);
    };
    Vec brk;
    for (double g : traj.grid)
      if (g > piece.sol.t_begin + 1e-13 && g < piece.sol.t_end - 1e-13) brk.push_back(g);
    OdeSolution sol = integrate_ode(rhs, piece.sol.t_begin, piece.sol.t_end, v, opt, brk);
    v = sol.y_end;
    flow.pieces.push_back(TrajectoryPiece{chart, std::move(sol)});

    if (switch_idx < traj.switches.size() &&
        std::abs(traj.switches[switch_idx].t - piece.sol.t_end) < 1e-10) {
      const auto& sw = traj.switches[switch_idx++];
      const ChartTransition* tr = m.find_transition(sw.from, sw.to);
      Vec x_end = piece.sol.y_end;
      v = matvec(tr->jacobian(x_end), v);
    }
  }

  for (std::size_t k = 0; k < traj.grid.size(); ++k) {
    double t = traj.grid[k];
    Vec comps = (k == 0) ? (v0.base.chart == traj.states.front().chart ? v0.components
                                                                       : flow.eval_components(t))
                         : flow.eval_components(t);
    if (k + 1 == traj.grid.size()) comps = v;
    flow.at_knots.push_back(TangentVector{traj.states[k], comps});
  }
  return flow;
}

// State transition matrix Q_{0,T} in chart coordinates (columns are
// variational solutions of the basis vectors).
inline Mat state_transition(const ControlSystem& sys, const Trajectory& traj, const Control& u,
                            double tol = 1e-9) {
  const std::size_t n = sys.manifold->dim;
  Mat q(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    TangentVector vj{traj.states.front(), unit(n, j)};
    TangentFlow f = variational_flow(sys, traj, vj, u, tol);
    for (std::size_t i = 0; i < n; ++i) q(i, j) = f.at_knots.back().components[i];
  }
  return q;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline void export_trajectory_csv(const Trajectory& traj, const std::string& path,
                                  std::size_t samples = 201) {
  CsvWriter csv(path);
  std::vector<std::string> names = {"t", "chart"};
  for (std::size_t i = 1; i <= traj.states.front().coords.size(); ++i)
    names.push_back("x" + std::to_string(i));
  csv.header(names);

  Vec times = traj.grid;
  for (std::size_t i = 0; i < samples; ++i)
    times.push_back(traj.t_begin() +
                    (traj.t_end() - traj.t_begin()) * double(i) / double(samples - 1));
  for (const auto& sw : traj.switches) times.push_back(sw.t);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-13; }),
              times.end());

  for (double t : times) {
    ManifoldPoint p = traj.eval(t);
    Vec row = {t, double(p.chart)};
    for (double c : p.coords) row.push_back(c);
    csv.row(row);
  }
}

}  // namespace pmpt
