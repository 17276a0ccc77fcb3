#pragma once

#include "pmpt/solver.hpp"

namespace pmpt {

// A built-in problem plus the declared data acceptance tests lean on:
// analytic envelope constants for the tube and closed-form oracle hooks.
struct CatalogEntry {
  Problem problem;
  double analytic_m = 1.0;  // declared sup envelope for |g| and |g_x| on the tube
  double analytic_k = 0.0;  // declared Lipschitz envelope
  std::string description;

  // optional closed-form data
  std::function<Vec(double)> known_trajectory_ambient;  // ambient oracle path
  double known_cost = std::numeric_limits<double>::quiet_NaN();
  double known_switch_time = std::numeric_limits<double>::quiet_NaN();

  BoundCertificate declared_certificate() const {
    return analytic_certificate(analytic_m, analytic_k, problem.system->horizon,
                                problem.config.tube_radius);
  }
};

namespace catalog {

// ---- bang1d: xdot = u, minimize x(T), fixed start --------------------------
inline CatalogEntry bang1d() {
  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = make_euclidean(1);
  sys->field = [](double, int, const Vec&, const Vec& u) { return Vec{u[0]}; };
  sys->field_x = [](double, int, const Vec&, const Vec&) { return Mat(1, 1); };
  sys->control_set = box_set({-1.0}, {1.0});
  sys->horizon = 1.0;
  sys->control_affine = true;

  CatalogEntry e;
  e.description = "scalar integrator, minimize x(T), u in [-1,1]";
  e.problem.name = "bang1d";
  e.problem.system = sys;
  e.problem.cost.value = [](const Vec&, const Vec& xT) { return xT[0]; };
  e.problem.cost.differential = [](const Vec&, const Vec&) {
    return CostDifferential{Vec{0.0}, Vec{1.0}};
  };
  e.problem.endpoint_set = endpoint_fixed_start({0.0});
  e.problem.initial_point = ManifoldPoint{0, {0.0}};
  e.problem.initial_control = uniform_control(std::vector<Vec>(8, Vec{0.0}), 1.0);
  e.problem.config.tube_radius = 3.0;
  e.analytic_m = 2.0;
  e.analytic_k = 0.0;
  e.known_cost = -1.0;
  return e;
}

// ---- double-integrator: rest-to-rest range maximization ---------------------
// xdot = (x2, u), u in [-1,1], T = 2, start (0,0), end on {x2 = 0},
// minimize -x1(T). Optimal: u = +1 then -1 with the switch at T/2.
inline CatalogEntry double_integrator() {
  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = make_euclidean(2);
  sys->field = [](double, int, const Vec& x, const Vec& u) { return Vec{x[1], u[0]}; };
  sys->field_x = [](double, int, const Vec&, const Vec&) {
    Mat a(2, 2);
    a(0, 1) = 1.0;
    return a;
  };
  sys->control_set = box_set({-1.0}, {1.0});
  sys->horizon = 2.0;
  sys->control_affine = true;

  CatalogEntry e;
  e.description = "double integrator, maximize range returning to rest";
  e.problem.name = "double-integrator";
  e.problem.system = sys;
  e.problem.cost.value = [](const Vec&, const Vec& xT) { return -xT[0]; };
  e.problem.cost.differential = [](const Vec&, const Vec&) {
    return CostDifferential{zeros(2), Vec{-1.0, 0.0}};
  };
  Mat rows(1, 2);
  rows(0, 1) = 1.0;  // x2(T) = 0
  e.problem.endpoint_set = endpoint_level_set({0.0, 0.0}, rows, {0.0});
  e.problem.initial_point = ManifoldPoint{0, {0.0, 0.0}};
  // infeasible guess: x2(T) = 0.6, so the run exercises the penalty pathway
  e.problem.initial_control = uniform_control(std::vector<Vec>(16, Vec{0.3}), 2.0);
  e.problem.config.tube_radius = 6.0;
  e.analytic_m = 10.0;
  e.analytic_k = 1.0;
  e.known_cost = -1.0;
  e.known_switch_time = 1.0;
  return e;
}

// ---- sphere-geodesic: steer toward a target point on S^2 -------------------
// qdot = P_q(u), |u| <= 1 ambient, T = pi/2, start at the south pole,
// minimize -<q(T), e1>. Optimal: the unit-speed great circle into e1.
inline Vec sphere_tangent_field(int chart, const Vec& x, const Vec& u) {
  double s = dot(x, x), w = 1.0 / (s + 1.0);
  double z = (s - 1.0) * w;
  if (chart == 1) z = -z;
  Vec q = {2.0 * x[0] * w, 2.0 * x[1] * w, z};
  double qu = dot(q, u);
  Vec tangent = {u[0] - qu * q[0], u[1] - qu * q[1], u[2] - qu * q[2]};
  double denom = (chart == 0) ? (1.0 - q[2]) : (1.0 + q[2]);
  double dsign = (chart == 0) ? 1.0 : -1.0;
  Vec out(2);
  out[0] = tangent[0] / denom + dsign * q[0] * tangent[2] / (denom * denom);
  out[1] = tangent[1] / denom + dsign * q[1] * tangent[2] / (denom * denom);
  return out;
}

inline CatalogEntry sphere_geodesic() {
  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = make_sphere2();
  sys->field = [](double, int chart, const Vec& x, const Vec& u) {
    return sphere_tangent_field(chart, x, u);
  };
  sys->field_x = make_fd_field_x(sys->field);
  sys->control_set = ball_set({0.0, 0.0, 0.0}, 1.0);
  sys->horizon = 1.5707963267948966;  // pi/2
  sys->control_affine = true;

  CatalogEntry e;
  e.description = "great-circle steering on the sphere, ambient target cost";
  e.problem.name = "sphere-geodesic";
  e.problem.system = sys;
  auto m = sys->manifold;
  e.problem.cost.value = [m](const Vec&, const Vec& xT) {
    Vec q = m->to_ambient(0, xT);
    return -q[0];
  };
  e.problem.cost.differential = [m](const Vec&, const Vec& xT) {
    Mat j = m->ambient_jacobian(0, xT);
    Vec xi(2);
    for (std::size_t c = 0; c < 2; ++c) xi[c] = -j(0, c);
    return CostDifferential{zeros(2), xi};
  };
  e.problem.endpoint_set = endpoint_fixed_start({0.0, 0.0});  // south pole, north chart
  e.problem.initial_point = ManifoldPoint{0, {0.0, 0.0}};
  e.problem.initial_control =
      uniform_control(std::vector<Vec>(32, Vec{0.0, 0.0, 0.0}), sys->horizon);
  e.problem.config.tube_radius = 1.5;
  e.analytic_m = 6.0;
  e.analytic_k = 8.0;
  e.known_cost = -1.0;
  e.known_trajectory_ambient = [](double t) {
    return Vec{std::sin(t), 0.0, -std::cos(t)};  // south pole toward e1
  };
  return e;
}

// ---- rigid-body: attitude steering on SO(3) ---------------------------------
inline CatalogEntry rigid_body() {
  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = make_so3();
  sys->field = [](double, int, const Vec& w, const Vec& u) {
    return matvec(so3::right_jacobian_inv(w), u);
  };
  sys->field_x = make_fd_field_x(sys->field);
  sys->control_set = ball_set({0.0, 0.0, 0.0}, 1.0);
  sys->horizon = 1.0;
  sys->control_affine = true;

  CatalogEntry e;
  e.description = "rotation steering with body-rate control toward a target attitude";
  e.problem.name = "rigid-body";
  e.problem.system = sys;
  auto m = sys->manifold;
  Vec axis = {0.26726124191242440, 0.53452248382484879, 0.80178372573727319};  // (1,2,3)/|.|
  // target beyond the reachable cone: the optimum runs toward it at full
  // rate the whole horizon, with no turn-back arc
  const double angle = 1.4;
  Mat r_target = so3::exp(angle * axis);
  Vec vec_target(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      vec_target[std::size_t(3 * i + j)] = r_target(std::size_t(i), std::size_t(j));

  e.problem.cost.value = [m, vec_target](const Vec&, const Vec& xT) {
    Vec r = m->to_ambient(0, xT);
    return -dot(r, vec_target);
  };
  e.problem.cost.differential = [m, vec_target](const Vec&, const Vec& xT) {
    Mat j = m->ambient_jacobian(0, xT);
    return CostDifferential{zeros(3), -1.0 * matTvec(j, vec_target)};
  };
  e.problem.endpoint_set = endpoint_fixed_start({0.0, 0.0, 0.0});
  e.problem.initial_point = ManifoldPoint{0, {0.0, 0.0, 0.0}};
  e.problem.initial_control =
      uniform_control(std::vector<Vec>(16, Vec{0.0, 0.0, 0.0}), 1.0);
  e.problem.config.tube_radius = 1.8;
  e.analytic_m = 4.0;
  e.analytic_k = 3.0;
  // optimum stops 0.4 rad short of the target: cost 1 + 2 cos(0.4)
  e.known_cost = -(1.0 + 2.0 * std::cos(angle - sys->horizon));
  e.known_trajectory_ambient = [axis](double t) {
    Mat r = so3::exp(t * axis);  // unit-rate geodesic toward the target
    Vec out(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out[std::size_t(3 * i + j)] = r(std::size_t(i), std::size_t(j));
    return out;
  };
  return e;
}

// ---- galerkin-heat:n --------------------------------------------------------
// Spectral truncation of a controlled heat equation: xk' = -k^2 xk + u/k,
// scalar u in [-1,1], fixed start xk(0) = 1/k, terminal ball |x(T)| <= 0.25,
// minimize |x(T)|^2 / 2.
inline CatalogEntry galerkin_heat(std::size_t n) {
  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = make_galerkin(n);
  Vec decay, gain;
  for (std::size_t k = 1; k <= n; ++k) {
    decay.push_back(double(k) * double(k));
    gain.push_back(1.0 / double(k));
  }
  sys->field = [decay, gain, n](double, int, const Vec& x, const Vec& u) {
    Vec dx(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] = -decay[i] * x[i] + gain[i] * u[0];
    return dx;
  };
  sys->field_x = [decay, n](double, int, const Vec&, const Vec&) {
    Mat a(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, i) = -decay[i];
    return a;
  };
  sys->control_set = box_set({-1.0}, {1.0});
  sys->horizon = 1.0;
  sys->control_affine = true;

  CatalogEntry e;
  e.description = "spectral heat steering, scalar bounded control, target ball";
  e.problem.name = "galerkin-heat:" + std::to_string(n);
  e.problem.system = sys;
  e.problem.cost.value = [](const Vec&, const Vec& xT) { return 0.5 * dot(xT, xT); };
  e.problem.cost.differential = [n](const Vec&, const Vec& xT) {
    return CostDifferential{zeros(n), xT};
  };
  Vec x0(n);
  for (std::size_t k = 1; k <= n; ++k) x0[k - 1] = 1.0 / double(k);
  e.problem.endpoint_set = endpoint_ball_target(x0, zeros(n), 0.25);
  e.problem.initial_point = ManifoldPoint{0, x0};
  e.problem.initial_control = uniform_control(std::vector<Vec>(16, Vec{0.0}), 1.0);
  e.problem.config.tube_radius = 4.0;
  e.analytic_m = double(n) * double(n) * 5.0 + 1.0;
  e.analytic_k = double(n) * double(n);
  // uncontrolled modes decay in closed form
  e.known_trajectory_ambient = [x0, decay, n](double t) {
    Vec x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = x0[i] * std::exp(-decay[i] * t);
    return x;
  };
  return e;
}

// ---- frozen2d: the uncontrollable toy ---------------------------------------
// x1' = u, x2' = 0, with S demanding x2(T) = 1: no variation changes the
// frozen coordinate, so the abnormal certificate carries the problem.
inline CatalogEntry frozen2d() {
  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = make_euclidean(2);
  sys->field = [](double, int, const Vec&, const Vec& u) { return Vec{u[0], 0.0}; };
  sys->field_x = [](double, int, const Vec&, const Vec&) { return Mat(2, 2); };
  sys->control_set = box_set({-1.0}, {1.0});
  sys->horizon = 1.0;
  sys->control_affine = true;

  CatalogEntry e;
  e.description = "frozen second coordinate with an unreachable terminal plane";
  e.problem.name = "frozen2d";
  e.problem.system = sys;
  e.problem.cost = zero_cost(2);
  Mat rows(1, 2);
  rows(0, 1) = 1.0;
  e.problem.endpoint_set = endpoint_level_set({0.0, 0.0}, rows, {1.0});
  e.problem.initial_point = ManifoldPoint{0, {0.0, 0.0}};
  e.problem.initial_control = uniform_control(std::vector<Vec>(8, Vec{0.0}), 1.0);
  e.problem.config.tube_radius = 3.0;
  e.analytic_m = 2.0;
  e.analytic_k = 0.0;
  return e;
}

}  // namespace catalog

inline std::vector<std::string> catalog_names() {
  return {"bang1d",     "double-integrator", "sphere-geodesic",
          "rigid-body", "galerkin-heat:n",   "frozen2d"};
}

inline CatalogEntry catalog_entry(const std::string& name) {
  if (name == "bang1d") return catalog::bang1d();
  if (name == "double-integrator") return catalog::double_integrator();
  if (name == "sphere-geodesic") return catalog::sphere_geodesic();
  if (name == "rigid-body") return catalog::rigid_body();
  if (name == "frozen2d") return catalog::frozen2d();
  if (name.rfind("galerkin-heat:", 0) == 0) {
    int n = 0;
    try {
      n = std::stoi(name.substr(std::string("galerkin-heat:").size()));
    } catch (...) {
      throw ParseError("bad mode count in '" + name + "'");
    }
    if (n < 1) throw ParseError("mode count must be positive in '" + name + "'");
    return catalog::galerkin_heat(std::size_t(n));
  }
  throw ParseError("unknown catalog problem '" + name + "'");
}

}  // namespace pmpt
