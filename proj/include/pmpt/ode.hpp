#pragma once

#include <algorithm>
#include <functional>

#include "pmpt/common.hpp"

namespace pmpt {

using OdeRhs = std::function<void(double t, const Vec& y, Vec& dydt)>;

struct OdeOptions {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double initial_step = 0.0;  // 0 = choose automatically
  double max_step = 0.0;      // 0 = no cap
  std::size_t max_steps = 2000000;
};

// One accepted step with the Dormand-Prince continuous extension.
struct DenseStep {
  double t0 = 0.0;
  double h = 0.0;
  Vec r1, r2, r3, r4, r5;

  Vec eval(double t) const {
    const double theta = (t - t0) / h;
    const double th1 = 1.0 - theta;
    Vec y(r1.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      y[i] = r1[i] + theta * (r2[i] + th1 * (r3[i] + theta * (r4[i] + th1 * r5[i])));
    return y;
  }

  // time derivative of the continuous extension
  Vec eval_derivative(double t) const {
    const double theta = (t - t0) / h;
    Vec d(r1.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = (r2[i] + (1.0 - 2.0 * theta) * r3[i] + theta * (2.0 - 3.0 * theta) * r4[i] +
              2.0 * theta * (1.0 - theta) * (1.0 - 2.0 * theta) * r5[i]) /
             h;
    return d;
  }
};

struct OdeSolution {
  double t_begin = 0.0;
  double t_end = 0.0;
  Vec y_begin, y_end;
  std::vector<DenseStep> steps;  // ordered along the direction of integration
  std::size_t n_accepted = 0;
  std::size_t n_rejected = 0;

  bool forward() const { return t_end >= t_begin; }

  Vec eval(double t) const {
    if (steps.empty()) return y_begin;
    const bool fwd = forward();
    double lo = fwd ? t_begin : t_end, hi = fwd ? t_end : t_begin;
    t = std::clamp(t, lo, hi);
    // binary search for the step containing t
    std::size_t a = 0, b = steps.size() - 1;
    while (a < b) {
      std::size_t m = (a + b) / 2;
      const DenseStep& s = steps[m];
      double s_end = s.t0 + s.h;
      bool past = fwd ? (t > s_end) : (t < s_end);
      if (past)
        a = m + 1;
      else
        b = m;
    }
    return steps[a].eval(t);
  }

  Vec eval_derivative(double t) const {
    if (steps.empty()) return Vec(y_begin.size(), 0.0);
    const bool fwd = forward();
    double lo = fwd ? t_begin : t_end, hi = fwd ? t_end : t_begin;
    t = std::clamp(t, lo, hi);
    std::size_t a = 0, b = steps.size() - 1;
    while (a < b) {
      std::size_t m = (a + b) / 2;
      const DenseStep& s = steps[m];
      double s_end = s.t0 + s.h;
      bool past = fwd ? (t > s_end) : (t < s_end);
      if (past)
        a = m + 1;
      else
        b = m;
    }
    return steps[a].eval_derivative(t);
  }
};

namespace dopri5 {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
// y5 - y4 error weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// dense-output weights
constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;
}  // namespace dopri5

// Integrates y' = f(t, y) from t0 to t1 (either direction). Break times in
// (t0,t1) are forced step boundaries; the right-hand side may be
// discontinuous there. step_cb, when set, runs after each accepted step and
// may veto it (return false) to request a state fixup by the caller.
inline OdeSolution integrate_ode(const OdeRhs& f, double t0, double t1, Vec y0,
                                 const OdeOptions& opt = {},
                                 std::vector<double> breaks = {}) {
  using namespace dopri5;
  const std::size_t n = y0.size();
  OdeSolution sol;
  sol.t_begin = t0;
  sol.t_end = t1;
  sol.y_begin = y0;
  if (t0 == t1) {
    sol.y_end = y0;
    return sol;
  }
  const double dir = t1 > t0 ? 1.0 : -1.0;

  breaks.push_back(t1);
  std::sort(breaks.begin(), breaks.end());
  if (dir < 0) std::reverse(breaks.begin(), breaks.end());

  Vec y = std::move(y0);
  Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  double t = t0;
  std::size_t total = 0;

  for (double t_stop : breaks) {
    if ((t_stop - t) * dir <= 1e-300) continue;
    if ((t_stop - t0) * dir <= 0 || (t1 - t_stop) * dir < -1e-12) continue;

    f(t, y, k1);
    if (!all_finite(k1)) throw NonFiniteState("ODE right-hand side not finite at segment start");

    double h;
    if (opt.initial_step > 0.0) {
      h = dir * opt.initial_step;
    } else {
      double dn = 0.0, yn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double sc = opt.abs_tol + opt.rel_tol * std::abs(y[i]);
        dn += (k1[i] / sc) * (k1[i] / sc);
        yn += (y[i] / sc) * (y[i] / sc);
      }
      double h0 = (dn > 1e-30) ? 0.01 * std::sqrt(yn / dn) : 1e-6;
      h = dir * std::min(std::max(h0, 1e-10), std::abs(t_stop - t));
    }
    if (opt.max_step > 0.0) h = dir * std::min(std::abs(h), opt.max_step);

    bool segment_done = false;
    while (!segment_done) {
      if (++total > opt.max_steps)
        throw BlowUp("ODE integration exceeded the step budget");
      if (std::abs(h) < 1e-14 * std::max(1.0, std::abs(t)))
        throw BlowUp("ODE step size underflow");
      bool last = false;
      if ((t + h - t_stop) * dir >= 0.0) {
        h = t_stop - t;
        last = true;
      }

      for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
      f(t + c2 * h, ytmp, k2);
      for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
      f(t + c3 * h, ytmp, k3);
      for (std::size_t i = 0; i < n; ++i)
        ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
      f(t + c4 * h, ytmp, k4);
      for (std::size_t i = 0; i < n; ++i)
        ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
      f(t + c5 * h, ytmp, k5);
      for (std::size_t i = 0; i < n; ++i)
        ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
      f(t + h, ytmp, k6);
      for (std::size_t i = 0; i < n; ++i)
        ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
      f(t + h, ynew, k7);

      double err = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
        double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
        err += (e / sc) * (e / sc);
      }
      err = std::sqrt(err / double(n));
      if (!std::isfinite(err)) throw NonFiniteState("ODE error estimate not finite");

      if (err <= 1.0) {
        DenseStep ds;
        ds.t0 = t;
        ds.h = h;
        ds.r1 = y;
        ds.r2.resize(n);
        ds.r3.resize(n);
        ds.r4.resize(n);
        ds.r5.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double ydiff = ynew[i] - y[i];
          const double bspl = h * k1[i] - ydiff;
          ds.r2[i] = ydiff;
          ds.r3[i] = bspl;
          ds.r4[i] = ydiff - h * k7[i] - bspl;
          ds.r5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] +
                          d7 * k7[i]);
        }
        sol.steps.push_back(std::move(ds));
        ++sol.n_accepted;

        t += h;
        y = ynew;
        k1 = k7;  // FSAL
        if (!all_finite(y)) throw NonFiniteState("ODE state not finite");
        if (last) {
          segment_done = true;
        } else {
          double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
          h *= std::clamp(fac, 0.2, 5.0);
          if (opt.max_step > 0.0 && std::abs(h) > opt.max_step) h = dir * opt.max_step;
        }
      } else {
        ++sol.n_rejected;
        double fac = 0.9 * std::pow(err, -0.2);
        h *= std::clamp(fac, 0.2, 1.0);
      }
    }
  }

  sol.y_end = y;
  return sol;
}

}  // namespace pmpt
