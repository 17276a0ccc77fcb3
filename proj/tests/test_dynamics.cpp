#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_helpers.hpp"

using namespace pmpt;
using namespace pmpt::testing;

TEST_CASE("constant control integrates exactly") {
  auto sys = scalar_integrator();
  Trajectory traj = integrate(*sys, origin_point(*sys), constant_control({1.0}, 1.0), 1e-9);
  CHECK(std::abs(traj.states.back().coords[0] - 1.0) < 1e-9);
}

TEST_CASE("exponential growth matches the closed form") {
  auto sys = exponential_system();
  Trajectory traj = integrate(*sys, ManifoldPoint{0, {1.0}}, constant_control({0.0}, 1.0), 1e-10);
  CHECK(std::abs(traj.states.back().coords[0] - std::exp(1.0)) < 1e-8);
}

namespace {

// great circle from the south pole toward e1, unit speed
Vec great_circle(double t) { return Vec{std::sin(t), 0.0, -std::cos(t)}; }
Vec great_circle_velocity(double t) { return Vec{std::cos(t), 0.0, std::sin(t)}; }

Control great_circle_control(double horizon, std::size_t knots) {
  std::vector<Vec> values;
  for (std::size_t i = 0; i < knots; ++i) {
    double mid = horizon * (double(i) + 0.5) / double(knots);
    values.push_back(great_circle_velocity(mid));
  }
  return uniform_control(std::move(values), horizon);
}

}  // namespace

TEST_CASE("sphere steering follows the great circle") {
  auto entry = catalog_entry("sphere-geodesic");
  const ControlSystem& sys = *entry.problem.system;
  const double T = sys.horizon;  // pi/2
  Control u = great_circle_control(T, 4096);
  Trajectory traj = integrate(sys, ManifoldPoint{0, {0.0, 0.0}}, u, 1e-10);
  Vec amb = sys.manifold->to_ambient(traj.states.back().chart, traj.states.back().coords);
  CHECK(norm(amb - Vec{1.0, 0.0, 0.0}) < 1e-6);
}

TEST_CASE("chart switching crosses the equator band cleanly") {
  auto entry = catalog_entry("sphere-geodesic");
  auto sys = std::make_shared<ControlSystem>(*entry.problem.system);
  const double T = 0.9 * 3.14159265358979312;
  sys->horizon = T;
  Control u = great_circle_control(T, 8192);
  Trajectory traj = integrate(*sys, ManifoldPoint{0, {0.0, 0.0}}, u, 1e-10);
  CHECK(traj.switches.size() >= 1);
  Vec amb = sys->manifold->to_ambient(traj.states.back().chart, traj.states.back().coords);
  CHECK(norm(amb - great_circle(T)) < 1e-6);
}

TEST_CASE("flow composition over a split horizon") {
  auto entry = catalog_entry("galerkin-heat:4");
  const ControlSystem& sys = *entry.problem.system;
  Control u = uniform_control({Vec{0.7}, Vec{-0.4}, Vec{0.9}, Vec{-1.0}}, 1.0);
  const double tol = 1e-9;
  Trajectory whole = integrate(sys, entry.problem.initial_point, u, tol);

  // integrate to s, restart, integrate to T
  const double s = 0.55;
  auto sys_a = std::make_shared<ControlSystem>(sys);
  sys_a->horizon = s;
  Control ua = refine_control(u, {s});
  Control ua_clip;
  for (std::size_t i = 0; i + 1 < ua.grid.size(); ++i)
    if (ua.grid[i] < s - 1e-13) {
      ua_clip.grid.push_back(ua.grid[i]);
      ua_clip.values.push_back(ua.values[i]);
    }
  ua_clip.grid.push_back(s);
  Trajectory first = integrate(*sys_a, entry.problem.initial_point, ua_clip, tol);

  auto sys_b = std::make_shared<ControlSystem>(sys);
  sys_b->horizon = 1.0 - s;
  Control ub;
  ub.grid.push_back(0.0);
  Control ur = refine_control(u, {s});
  for (std::size_t i = 0; i + 1 < ur.grid.size(); ++i)
    if (ur.grid[i] >= s - 1e-13) {
      ub.grid.push_back(ur.grid[i + 1] - s);
      ub.values.push_back(ur.values[i]);
    }
  Trajectory second = integrate(*sys_b, first.states.back(), ub, tol);

  CHECK(norm(second.states.back().coords - whole.states.back().coords) <= 10.0 * tol * 100);
}

TEST_CASE("variational flow of a state-independent field is constant") {
  auto sys = scalar_integrator();
  Control u = constant_control({0.5}, 1.0);
  Trajectory traj = integrate(*sys, origin_point(*sys), u, 1e-9);
  TangentFlow f = variational_flow(*sys, traj, TangentVector{traj.states.front(), {1.0}}, u);
  for (const auto& v : f.at_knots) CHECK(v.components[0] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("variational flow of the exponential system") {
  auto sys = exponential_system();
  Control u = constant_control({0.0}, 1.0);
  Trajectory traj = integrate(*sys, ManifoldPoint{0, {1.0}}, u, 1e-10);
  TangentFlow f = variational_flow(*sys, traj, TangentVector{traj.states.front(), {2.0}}, u,
                                   1e-10);
  CHECK(std::abs(f.at_knots.back().components[0] - 2.0 * std::exp(1.0)) < 1e-8);
}

TEST_CASE("variational flow matches endpoint finite differences across the catalog") {
  SplitMix64 rng(77);
  for (const char* name : {"bang1d", "double-integrator", "sphere-geodesic", "rigid-body",
                           "galerkin-heat:4"}) {
    INFO("problem ", name);
    auto entry = catalog_entry(name);
    const ControlSystem& sys = *entry.problem.system;
    const std::size_t n = sys.manifold->dim;
    std::vector<Vec> values;
    for (int k = 0; k < 4; ++k)
      values.push_back(sys.control_set.clamp([&] {
        Vec v(sys.control_set.dim());
        for (double& x : v) x = 0.6 * rng.uniform(-1.0, 1.0);
        return v;
      }()));
    Control u = uniform_control(values, sys.horizon);
    ManifoldPoint q0 = entry.problem.initial_point;
    Trajectory traj = integrate(sys, q0, u, 1e-11);

    Vec dir(n);
    for (double& x : dir) x = rng.uniform(-1.0, 1.0);
    dir *= 1.0 / norm(dir);
    TangentFlow f = variational_flow(sys, traj, TangentVector{q0, dir}, u, 1e-11);

    const double h = 1e-5;
    ManifoldPoint qp = q0, qm = q0;
    qp.coords = axpy(h, dir, q0.coords);
    qm.coords = axpy(-h, dir, q0.coords);
    Vec xp = integrate(sys, qp, u, 1e-11).states.back().coords;
    Vec xm = integrate(sys, qm, u, 1e-11).states.back().coords;
    Vec fd = (1.0 / (2.0 * h)) * (xp - xm);
    CHECK(norm(fd - f.at_knots.back().components) /
              std::max(1.0, norm(f.at_knots.back().components)) <
          1e-4);
  }
}

TEST_CASE("declared state derivatives match finite differences of the field") {
  SplitMix64 rng(21);
  for (const char* name : {"bang1d", "double-integrator", "galerkin-heat:4", "sphere-geodesic",
                           "rigid-body"}) {
    auto entry = catalog_entry(name);
    const ControlSystem& sys = *entry.problem.system;
    auto fd = make_fd_field_x(sys.field);
    for (int trial = 0; trial < 10; ++trial) {
      ManifoldPoint p = sample_point(*sys.manifold, rng);
      Vec u = sys.control_set.sample(1, rng.next()).front();
      Mat a = sys.field_x(0.3, p.chart, p.coords, u);
      Mat b = fd(0.3, p.chart, p.coords, u);
      double denom = std::max(1.0, operator_norm(a));
      CHECK(operator_norm(a - b) / denom < 1e-4);
    }
  }
}

TEST_CASE("dense output satisfies the differential identity along each piece") {
  auto entry = catalog_entry("galerkin-heat:4");
  const ControlSystem& sys = *entry.problem.system;
  Control u = uniform_control({Vec{0.6}, Vec{-0.9}, Vec{0.2}, Vec{1.0}}, 1.0);
  Trajectory traj = integrate(sys, entry.problem.initial_point, u, 1e-9);
  for (const auto& piece : traj.pieces) {
    for (const auto& step : piece.sol.steps) {
      double t = step.t0 + 0.5 * step.h;
      Vec x = step.eval(t);
      Vec dx = step.eval_derivative(t);
      Vec f = sys.field(t, piece.chart, x, u.at(t));
      // the interpolant derivative tracks the field to a few orders above
      // the local error tolerance
      CHECK(norm(dx - f) <= 1e-6 * std::max(1.0, norm(f)));
    }
  }
}

TEST_CASE("trajectory CSV export format") {
  auto sys = scalar_integrator();
  Trajectory traj = integrate(*sys, origin_point(*sys), constant_control({1.0}, 1.0), 1e-9);
  std::string path = (std::filesystem::temp_directory_path() / "pmpt_traj_test.csv").string();
  export_trajectory_csv(traj, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,chart,x1");
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  CHECK(last.rfind("1,0,", 0) == 0);
  CHECK(last.substr(4).rfind("0.9999", 0) == 0);  // x(1) = 1 to integration tolerance
  std::filesystem::remove(path);
}

TEST_CASE("control validation and lookup") {
  auto sys = scalar_integrator();
  Control bad{Vec{0.0, 0.5}, {Vec{1.0}}};  // does not span the horizon
  CHECK_THROWS_AS((void)integrate(*sys, origin_point(*sys), bad, 1e-9), Error);

  Control u = uniform_control({Vec{1.0}, Vec{2.0}, Vec{3.0}}, 3.0);
  CHECK(u.at(0.5)[0] == 1.0);
  CHECK(u.at(1.0)[0] == 2.0);  // right-open pieces
  CHECK(u.at(2.999)[0] == 3.0);
  CHECK(u.at(3.0)[0] == 3.0);

  Control r = refine_control(u, {0.25, 1.5});
  CHECK(r.grid.size() == 6);
  CHECK(r.at(0.1)[0] == 1.0);
  CHECK(r.at(1.7)[0] == 2.0);
}

TEST_CASE("leaving a bounded chart with no neighbor reports BlowUp") {
  auto m = std::make_shared<ChartedManifold>();
  m->name = "bounded1d";
  m->dim = 1;
  m->charts.push_back(Chart{"only", 5.0});

  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = m;
  sys->field = [](double, int, const Vec& x, const Vec&) { return Vec{x[0]}; };
  sys->field_x = [](double, int, const Vec&, const Vec&) {
    Mat a(1, 1);
    a(0, 0) = 1.0;
    return a;
  };
  sys->control_set = box_set({-1.0}, {1.0});
  sys->horizon = 3.0;
  CHECK_THROWS_AS(
      (void)integrate(*sys, ManifoldPoint{0, {1.0}}, constant_control({0.0}, 3.0), 1e-9),
      BlowUp);
}
