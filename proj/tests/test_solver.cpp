#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_helpers.hpp"

using namespace pmpt;
using namespace pmpt::testing;

TEST_CASE("penalty cost assembly") {
  CatalogEntry entry = catalog_entry("bang1d");
  Problem p = entry.problem;
  // steer-to-target variant so Phi is non-trivial
  p.endpoint_set = endpoint_fixed_pair({0.0}, {0.5});
  auto setup = make_reduced_setup(p.system, p.initial_point, p.initial_control, 3.0);
  DistanceSurrogate ds = make_distance_surrogate(p.endpoint_set, setup.lchart, 1.0);

  SUBCASE("kappa = 0 reduces to the plain cost") {
    EndpointCost j = penalty_cost(p, 0.0, ds);
    CHECK(j({0.0}, {0.3}) == doctest::Approx(0.3));
  }
  SUBCASE("feasible pairs pay no penalty") {
    EndpointCost j = penalty_cost(p, 100.0, ds);
    CHECK(j({0.0}, {0.5}) == doctest::Approx(0.5));
  }
  SUBCASE("violation is charged linearly") {
    Problem pz = p;
    pz.cost = zero_cost(1);
    EndpointCost j = penalty_cost(pz, 5.0, ds);
    CHECK(j({0.0}, {0.3}) == doctest::Approx(1.0));  // kappa * |0.3 - 0.5| = 5 * 0.2
  }
}

TEST_CASE("penalty threshold from the probe") {
  CatalogEntry entry = catalog_entry("bang1d");
  Problem p = entry.problem;
  p.endpoint_set = endpoint_fixed_pair({0.0}, {0.5});
  auto setup = make_reduced_setup(p.system, p.initial_point, p.initial_control, 3.0);
  DistanceSurrogate ds = make_distance_surrogate(p.endpoint_set, setup.lchart, 1.0);
  ProbeResult probe = weak_controllability_probe(setup.pair, ds, 32, *setup.rs);
  REQUIRE(probe.controllable());

  PenaltyEstimate pe = penalty_threshold(p, setup.pair, probe, *setup.rs);
  // kappa = safety * 4 c1 / |delta|
  CHECK(pe.kappa == doctest::Approx(8.0 * pe.c1 / std::abs(probe.delta_hat)).epsilon(1e-12));
  CHECK(pe.kappa > 0.0);
  CHECK(!pe.capped);

  SUBCASE("the cap engages when the budget demands it") {
    Problem small = p;
    small.config.kappa_max = 1e-3;
    PenaltyEstimate capped = penalty_threshold(small, setup.pair, probe, *setup.rs);
    CHECK(capped.capped);
    CHECK(capped.kappa == doctest::Approx(1e-3));
  }
  SUBCASE("non-controllable pairs are rejected") {
    ProbeResult flat = probe;
    flat.delta_hat = -1e-9;
    CHECK_THROWS_AS((void)penalty_threshold(p, setup.pair, flat, *setup.rs), NotControllable);
  }
}

TEST_CASE("formula instantiation: delta = -1 with c1 = 2 gives kappa = 16") {
  // the arithmetic behind penalty_threshold, pinned once with exact inputs
  double c1 = 2.0, delta = -1.0;
  double kappa = 2.0 * 4.0 * c1 / std::abs(delta);
  CHECK(kappa == 16.0);
}

TEST_CASE("ekeland step behavior") {
  CatalogEntry entry = catalog_entry("bang1d");
  Problem p = entry.problem;
  auto setup = make_reduced_setup(p.system, p.initial_point, p.initial_control, 3.0);
  DistanceSurrogate ds = make_distance_surrogate(p.endpoint_set, setup.lchart, 1.0);
  EndpointCost J = penalty_cost(p, 0.0, ds);

  SUBCASE("descent direction found from the zero control") {
    EkelandStepResult step = ekeland_step(J, setup.pair, 1.0, 100.0, *setup.rs, p.endpoint_set,
                                          p.config, 0);
    CHECK(step.improved);
    double j_before = J(setup.pair.x0hat(), setup.pair.reduced.sol.y_end);
    double j_after = J(step.pair.x0hat(), step.pair.reduced.sol.y_end);
    CHECK(j_after < j_before);
    CHECK(step.rho_step <= 100.0);
  }
  SUBCASE("the optimal pair is stationary") {
    ControlPair opt = make_control_pair(*setup.rs, p.initial_point,
                                        constant_control({-1.0}, 1.0));
    EkelandStepResult step = ekeland_step(J, opt, 1.0, 100.0, *setup.rs, p.endpoint_set,
                                          p.config, 0);
    CHECK(!step.improved);
  }
  SUBCASE("an infinite tether degenerates to plain descent") {
    EkelandStepResult tethered = ekeland_step(J, setup.pair, 1.0, 1e9, *setup.rs,
                                              p.endpoint_set, p.config, 0);
    EkelandStepResult plain = ekeland_step(J, setup.pair, 0.0, 1e9, *setup.rs, p.endpoint_set,
                                           p.config, 0);
    CHECK(tethered.improved == plain.improved);
    CHECK(std::abs(tethered.achieved_decrease - plain.achieved_decrease) < 1e-6);
  }
}

TEST_CASE("solve bang1d end to end") {
  CatalogEntry entry = catalog_entry("bang1d");
  SolveReport report = solve(entry.problem);
  CHECK(report.lambda0 == 1);
  CHECK(std::abs(report.trajectory.states.back().coords[0] + 1.0) < 1e-6);
  CHECK(report.certificate.max_residual <= 1e-8);
  CHECK(report.certificate.transversality <= 1e-8);
  CHECK(report.certificate.nontriviality >= 1e-8);
  // the costate is identically -1
  for (double t : {0.0, 0.5, 1.0})
    CHECK(report.certificate.costate.eval_components(t)[0] == doctest::Approx(-1.0).epsilon(1e-8));
  // and the control rides the lower vertex
  for (double t : {0.1, 0.5, 0.9}) CHECK(report.control.at(t)[0] == doctest::Approx(-1.0));
}

TEST_CASE("solve the frozen-coordinate toy: abnormal certificate") {
  CatalogEntry entry = catalog_entry("frozen2d");
  SolveReport report = solve(entry.problem);
  CHECK(report.lambda0 == 0);
  CHECK(!report.controllable);
  // costate supported on the frozen coordinate
  Vec z0 = report.certificate.costate.initial().components;
  CHECK(std::abs(z0[0]) < 1e-9);
  CHECK(std::abs(z0[1]) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.certificate.nontriviality > 0.0);
  CHECK(report.certificate.max_residual <= 1e-8);
  CHECK(report.certificate.transversality <= 1e-8);
  CHECK(report.pass());
}

TEST_CASE("indirect shooting on bang1d converges immediately") {
  CatalogEntry entry = catalog_entry("bang1d");
  // start from a wrong terminal covector
  ShootingResult sr = shooting_refine(entry.problem, {0.35}, entry.problem.initial_control);
  CHECK(sr.converged);
  CHECK(sr.iterations <= 2);
  CHECK(sr.residual_norm <= 1e-10);
  CHECK(sr.cost_value == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("double integrator switch structure") {
  CatalogEntry entry = catalog_entry("double-integrator");
  SolveReport report = solve(entry.problem);
  REQUIRE(report.refined);
  // one-switch bang-bang: +1 then -1 with the switch at T/2
  double switch_time = -1.0;
  for (std::size_t i = 0; i + 1 < report.control.grid.size(); ++i) {
    if (report.control.values[i][0] > 0.5 &&
        i + 1 < report.control.values.size() &&
        report.control.values[i + 1][0] < -0.5) {
      switch_time = report.control.grid[i + 1];
      break;
    }
  }
  REQUIRE(switch_time > 0.0);
  CHECK(std::abs(switch_time - entry.known_switch_time) < 1e-6);
  CHECK(report.cost_value == doctest::Approx(entry.known_cost).epsilon(1e-6));
  CHECK(report.certificate.max_residual <= 1e-8);
}

TEST_CASE("free-start problems vary the initial point") {
  // xdot = u with a smooth endpoint cost pulling x(0) toward 1 and x(T)
  // toward 0; the start is unconstrained
  Problem p;
  p.name = "free-start";
  auto sys = scalar_integrator();
  p.system = sys;
  p.cost.value = [](const Vec& x0, const Vec& xT) {
    return (x0[0] - 1.0) * (x0[0] - 1.0) + xT[0] * xT[0];
  };
  p.cost.differential = [](const Vec& x0, const Vec& xT) {
    return CostDifferential{Vec{2.0 * (x0[0] - 1.0)}, Vec{2.0 * xT[0]}};
  };
  p.endpoint_set = endpoint_free();
  p.initial_point = ManifoldPoint{0, {0.0}};
  p.initial_control = uniform_control(std::vector<Vec>(8, Vec{0.0}), 1.0);
  p.config.tube_radius = 4.0;

  SolveReport report = solve(p);
  CHECK(report.lambda0 == 1);
  // optimum: x(0) = 1, u = -1 (cost 0); the sampled descent gets close
  CHECK(report.trajectory.states.front().coords[0] > 0.6);
  CHECK(std::abs(report.trajectory.states.back().coords[0]) < 0.4);
  CHECK(report.cost_value < 0.2);
  CHECK(report.certificate.nontriviality >= 1e-8);
}

TEST_CASE("a tight tube forces chart re-referencing without losing the solution") {
  CatalogEntry entry = catalog_entry("bang1d");
  entry.problem.config.tube_radius = 0.4;  // the optimal arc moves a distance 1
  SolveReport report = solve(entry.problem);
  CHECK(report.rebuilds >= 1);
  CHECK(std::abs(report.trajectory.states.back().coords[0] + 1.0) < 1e-6);
  CHECK(report.certificate.max_residual <= 1e-8);
}

TEST_CASE("solve reports are reproducible from the seed") {
  CatalogEntry entry = catalog_entry("bang1d");
  SolveReport a = solve(entry.problem);
  SolveReport b = solve(entry.problem);
  CHECK(a.cost_value == b.cost_value);
  CHECK(a.phi_value == b.phi_value);
  CHECK(a.kappa == b.kappa);
  CHECK(a.certificate.max_residual == b.certificate.max_residual);
  CHECK(a.log.size() == b.log.size());
}

TEST_CASE("emitted certificates honor the nontriviality gate") {
  // every solver path must produce lambda0 + min |zeta| above the floor
  for (const char* name : {"bang1d", "frozen2d", "double-integrator"}) {
    SolveReport report = solve(catalog_entry(name).problem);
    CHECK(report.certificate.nontriviality >= 1e-8);
  }
}

TEST_CASE("ekeland iteration log invariants") {
  CatalogEntry entry = catalog_entry("double-integrator");
  SolveReport report = solve(entry.problem);
  // accepted steps decrease the tethered objective and respect the tether
  for (std::size_t i = 1; i < report.log.size(); ++i) {
    const auto& prev = report.log[i - 1];
    const auto& cur = report.log[i];
    if (cur.lambda > 0.0) {
      CHECK(cur.J <= prev.J + 1e-12);
      CHECK(cur.rho_step <= cur.sigma + 1e-12);
    }
  }
}
