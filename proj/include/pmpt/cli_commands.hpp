#pragma once

#include <iostream>
#include <sstream>

#include "pmpt/problem_io.hpp"

namespace pmpt {

// Exit-code contract: 0 pass, 1 certificate fail, 2 parse error,
// 3 numerical failure.
enum ExitCode { kExitPass = 0, kExitCertificateFail = 1, kExitParse = 2, kExitNumerical = 3 };

inline void write_control_csv(const Control& u, const std::string& path) {
  CsvWriter csv(path);
  std::vector<std::string> names = {"t"};
  for (std::size_t i = 1; i <= u.values.front().size(); ++i)
    names.push_back("u" + std::to_string(i));
  csv.header(names);
  for (std::size_t i = 0; i + 1 < u.grid.size(); ++i) {
    Vec row = {u.grid[i]};
    for (double v : u.values[i]) row.push_back(v);
    csv.row(row);
  }
  Vec last = {u.grid.back()};
  for (double v : u.values.back()) last.push_back(v);
  csv.row(last);
}

namespace detail_csv {

inline std::vector<Vec> read_rows(const std::string& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV file: " + path);
  std::string line;
  std::vector<Vec> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    if (first) {
      if (header) {
        while (std::getline(ss, cell, ',')) header->push_back(cell);
      }
      first = false;
      continue;
    }
    Vec row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        throw ParseError("non-numeric cell '" + cell + "' in " + path);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("CSV file has no data rows: " + path);
  return rows;
}

}  // namespace detail_csv

inline Control read_control_csv(const std::string& path) {
  std::vector<std::string> header;
  std::vector<Vec> rows = detail_csv::read_rows(path, &header);
  if (rows.size() < 2) throw ParseError("control CSV needs at least two rows: " + path);
  Control u;
  for (const Vec& r : rows) {
    if (r.size() < 2) throw ParseError("control CSV rows need 't,u1..' columns: " + path);
    u.grid.push_back(r[0]);
    u.values.push_back(Vec(r.begin() + 1, r.end()));
  }
  u.values.pop_back();  // the final row pins the horizon knot
  for (std::size_t i = 0; i + 1 < u.grid.size(); ++i)
    if (u.grid[i + 1] <= u.grid[i]) throw ParseError("control CSV grid must increase: " + path);
  return u;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline int cmd_simulate(const std::string& problem_ref, const std::string& control_path,
                        const std::string& out_dir, double tol_override, std::ostream& log) {
  Problem p = load_problem(problem_ref);
  if (tol_override > 0) p.config.integrator_tol = tol_override;
  Control u = control_path.empty() ? p.initial_control : read_control_csv(control_path);
  try {
    Trajectory traj = integrate(*p.system, p.initial_point, u, p.config.integrator_tol);
    ensure_dir(out_dir);
    export_trajectory_csv(traj, out_dir + "/trajectory.csv");
    log << "simulate: " << p.name << " -> " << out_dir << "/trajectory.csv ("
        << traj.pieces.size() << " pieces, " << traj.switches.size() << " chart switches)\n";
  } catch (const BlowUp& ex) {
    log << "simulate: integration blow-up: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const NonFiniteState& ex) {
    log << "simulate: " << ex.what() << "\n";
    return kExitNumerical;
  }
  return kExitPass;
}

// ---------------------------------------------------------------------------
// chatter
// ---------------------------------------------------------------------------

// Integrand specs: "const:c1,c2,..." or "sin:f1,f2,..." (one entry per atom).
inline std::vector<TimeFunction> parse_integrand_spec(const std::string& spec,
                                                      std::size_t* atoms) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) throw ParseError("integrand spec needs 'kind:params'");
  std::string kind = spec.substr(0, colon);
  std::vector<double> params;
  std::stringstream ss(spec.substr(colon + 1));
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      params.push_back(std::stod(cell));
    } catch (...) {
      throw ParseError("bad number '" + cell + "' in integrand spec");
    }
  }
  if (params.empty()) throw ParseError("integrand spec has no parameters");
  *atoms = params.size();
  std::vector<TimeFunction> fns;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double c = params[i];
    if (kind == "const")
      fns.push_back([c](double) { return Vec{c}; });
    else if (kind == "sin")
      fns.push_back([c, i](double t) {
        return Vec{std::sin(2.0 * 3.14159265358979312 * c * t + double(i))};
      });
    else
      throw ParseError("unknown integrand kind '" + kind + "'");
  }
  return fns;
}

inline int cmd_chatter(const Vec& weights, std::size_t r_lo, std::size_t r_hi,
                       const std::string& integrand_spec, double horizon,
                       const std::string& out_dir, std::ostream& log) {
  if (weights.empty()) throw ParseError("chatter needs at least one weight");
  double ws = 0.0;
  for (double w : weights) ws += w;
  if (std::abs(ws - 1.0) > 1e-9) throw ParseError("chatter weights must sum to 1");
  std::size_t atoms = 0;
  std::vector<TimeFunction> fns = parse_integrand_spec(integrand_spec, &atoms);
  if (atoms != weights.size())
    throw ParseError("integrand spec and weights disagree on the atom count");

  ensure_dir(out_dir);
  CsvWriter csv(out_dir + "/chatter.csv");
  csv.header({"r", "diameter", "atom", "error"});
  for (std::size_t r = r_lo; r <= r_hi; r *= 2) {
    ChatteringPartition part = chattering_partition(weights, r, horizon);
    ChatteringErrorResult err = chattering_error(fns, weights, part);
    for (std::size_t i = 0; i < err.per_atom.size(); ++i)
      csv.row({double(r), part.diameter, double(i + 1), err.per_atom[i]});
    csv.row({double(r), part.diameter, 0.0, err.combined});  // atom 0: combined
    if (r_hi / r < 2) break;
  }
  log << "chatter: wrote " << out_dir << "/chatter.csv\n";
  return kExitPass;
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

inline int cmd_certify(const std::string& problem_ref, const std::string& which,
                       const std::string& out_dir, std::ostream& log) {
  CatalogEntry entry;
  try {
    entry = catalog_entry(problem_ref);
  } catch (const ParseError&) {
    entry.problem = load_problem(problem_ref);
    entry.analytic_m = 0.0;  // fall back to sampled envelopes
  }
  Problem& p = entry.problem;
  const ControlSystem& sys = *p.system;
  const std::size_t n = sys.manifold->dim;

  Trajectory ref = integrate(sys, p.initial_point, p.initial_control, p.config.integrator_tol);
  LagrangianChartPtr lc = build_lagrangian_chart(
      sys, ref, sys.manifold->charts[std::size_t(p.initial_point.chart)].id,
      p.config.tube_radius);
  ReducedSystemPtr rs = reduce(p.system, lc);
  ControlPair pair = make_control_pair(*rs, p.initial_point, p.initial_control,
                                       p.config.integrator_tol);
  BoundCertificate cert = entry.analytic_m > 0.0
                              ? entry.declared_certificate()
                              : certify_bounds(*rs, 512, p.config.seed);

  // deterministic variation: the first extreme control value mixed in, with
  // a unit start direction scaled into the tube
  VariationSpec spec;
  spec.v0 = unit(n, 0);
  Vec atom = sys.control_set.extreme_points().front();
  spec.nu = dirac(constant_control(atom, sys.horizon));

  ensure_dir(out_dir);
  bool pass = true;
  if (which == "linear" || which == "second") {
    RateCertificate rc = which == "linear"
                             ? linear_rate_certificate(pair, spec, *rs, cert, {},
                                                       p.config.integrator_tol)
                             : second_order_certificate(pair, spec, *rs, cert, {},
                                                        p.config.integrator_tol);
    CsvWriter csv(out_dir + "/certificate_" + which + ".csv");
    csv.header({"lambda", "deviation", "bound", "pass"});
    for (std::size_t i = 0; i < rc.lambdas.size(); ++i)
      csv.row({rc.lambdas[i], rc.deviations[i], rc.bounds[i],
               rc.deviations[i] <= rc.bounds[i] + 1e-12 ? 1.0 : 0.0});
    csv.comment("fitted_slope = " + fmt17(rc.fitted_slope) +
                (rc.degenerate ? " (degenerate: deviations at measurement floor)" : ""));
    csv.comment("constant = " + fmt17(rc.constant));
    pass = rc.pass;
    log << "certify " << which << ": slope " << rc.fitted_slope << ", pass "
        << (pass ? "yes" : "no") << "\n";
  } else if (which == "rho") {
    // pseudometric axioms on seeded random pairs
    SplitMix64 rng(derive_seed(p.config.seed, 77));
    std::vector<ControlPair> pairs;
    Vec all_knots;
    for (int i = 0; i < 6; ++i) {
      std::vector<Vec> vals;
      std::size_t kn = 4;
      for (std::size_t k = 0; k < kn; ++k) vals.push_back(sys.control_set.clamp(
          [&] {
            Vec v(sys.control_set.dim());
            for (double& x : v) x = rng.uniform(-1.0, 1.0);
            return v;
          }()));
      Control u = uniform_control(vals, sys.horizon);
      Vec x0 = pair.x0hat();
      for (double& c : x0) c += 0.05 * rng.uniform(-1.0, 1.0);
      ControlPair cp = make_control_pair(*rs, ManifoldPoint{lc->base_chart, x0}, u,
                                         p.config.integrator_tol);
      all_knots = merge_grids(all_knots, u.grid);
      pairs.push_back(std::move(cp));
    }
    CsvWriter csv(out_dir + "/certificate_rho.csv");
    csv.header({"triple", "rho_ab", "rho_ba", "rho_ac", "rho_bc", "triangle_slack", "pass"});
    std::size_t idx = 0;
    for (std::size_t i = 0; i < pairs.size() && pass; ++i)
      for (std::size_t j = i + 1; j < pairs.size(); ++j)
        for (std::size_t k = j + 1; k < pairs.size(); ++k) {
          double ab = pseudometric(pairs[i], pairs[j], *rs, 4096, all_knots);
          double ba = pseudometric(pairs[j], pairs[i], *rs, 4096, all_knots);
          double ac = pseudometric(pairs[i], pairs[k], *rs, 4096, all_knots);
          double bc = pseudometric(pairs[j], pairs[k], *rs, 4096, all_knots);
          double slack = ac - (ab + bc);
          bool ok = std::abs(ab - ba) <= 1e-10 && slack <= 1e-8 && ab >= 0 && ac >= 0;
          csv.row({double(idx++), ab, ba, ac, bc, slack, ok ? 1.0 : 0.0});
          pass = pass && ok;
        }
    log << "certify rho: pass " << (pass ? "yes" : "no") << "\n";
  } else {
    throw ParseError("unknown certificate kind '" + which + "' (use linear|second|rho)");
  }
  return pass ? kExitPass : kExitCertificateFail;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

inline void write_solve_report(const SolveReport& report, const Problem& problem,
                               const std::string& out_dir) {
  ensure_dir(out_dir);
  export_trajectory_csv(report.trajectory, out_dir + "/solution_trajectory.csv");
  export_costate_csv(report.certificate.costate, report.trajectory,
                     out_dir + "/solution_costate.csv");
  write_control_csv(report.control, out_dir + "/solution_control.csv");

  CsvWriter itcsv(out_dir + "/iteration_log.csv");
  itcsv.header({"iter", "J", "eps", "sigma", "rho_step", "predicted", "lambda", "phi"});
  for (const auto& e : report.log)
    itcsv.row({double(e.iter), e.J, e.eps, e.sigma, e.rho_step, e.predicted, e.lambda,
               e.phi_value});

  std::ofstream rep(out_dir + "/solution_report.txt", std::ios::binary);
  rep << "problem: " << report.problem_name << "\n";
  rep << "seed: " << report.seed << "\n";
  rep << "lambda0: " << report.lambda0 << "\n";
  rep << "controllable: " << (report.controllable ? "yes" : "no")
      << " (delta_hat = " << fmt17(report.delta_hat) << ")\n";
  rep << "kappa: " << fmt17(report.kappa) << "\n";
  rep << "c1: " << fmt17(report.c1) << "\n";
  rep << "cost: " << fmt17(report.cost_value) << "\n";
  rep << "phi: " << fmt17(report.phi_value) << "\n";
  rep << "descent_cost: " << fmt17(report.descent_cost) << "\n";
  rep << "descent_phi: " << fmt17(report.descent_phi) << "\n";
  rep << "max_residual: " << fmt17(report.certificate.max_residual) << "\n";
  rep << "integral_residual: " << fmt17(report.certificate.integral_residual) << "\n";
  rep << "transversality_residual: " << fmt17(report.certificate.transversality) << "\n";
  rep << "nontriviality: " << fmt17(report.certificate.nontriviality) << "\n";
  rep << "refined: " << (report.refined ? "yes" : "no") << "\n";
  rep << "shooting_residual: " << fmt17(report.shooting_residual) << "\n";
  rep << "shooting_iterations: " << report.shooting_iterations << "\n";
  rep << "iterations: " << report.log.size() << "\n";
  rep << "rebuilds: " << report.rebuilds << "\n";
  rep << "stationary: " << (report.stationary ? "yes" : "no") << "\n";
  rep << "pass: " << (report.pass(problem.config.residual_pass) ? "yes" : "no") << "\n";
}

inline int cmd_solve(const std::string& problem_ref, const std::string& out_dir,
                     std::ostream& log) {
  Problem p = load_problem(problem_ref);
  SolveReport report;
  try {
    report = solve(p);
  } catch (const BlowUp& ex) {
    log << "solve: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const NonFiniteState& ex) {
    log << "solve: " << ex.what() << "\n";
    return kExitNumerical;
  }
  write_solve_report(report, p, out_dir);
  log << "solve: " << p.name << " lambda0=" << report.lambda0 << " cost="
      << report.cost_value << " phi=" << report.phi_value
      << " max_residual=" << report.certificate.max_residual << " pass="
      << (report.pass(p.config.residual_pass) ? "yes" : "no") << "\n";
  return report.pass(p.config.residual_pass) ? kExitPass : kExitCertificateFail;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline int cmd_verify(const std::string& problem_ref, const std::string& dir,
                      std::ostream& log) {
  Problem p = load_problem(problem_ref);
  const ControlSystem& sys = *p.system;

  Control u = read_control_csv(dir + "/solution_control.csv");
  std::vector<Vec> zrows = detail_csv::read_rows(dir + "/solution_costate.csv", nullptr);

  int lambda0 = 1;
  {
    std::ifstream rep(dir + "/solution_report.txt");
    if (!rep) throw ParseError("cannot open " + dir + "/solution_report.txt");
    std::string line;
    while (std::getline(rep, line))
      if (line.rfind("lambda0:", 0) == 0) lambda0 = std::stoi(line.substr(8));
  }

  Trajectory traj = integrate(sys, p.initial_point, u, p.config.integrator_tol);

  // terminal covector from the given costate rows
  const Vec& zlast = zrows.back();
  Vec zT(zlast.begin() + 2, zlast.end());
  CotangentVector eta{traj.states.back(), -1.0 * zT};
  CostateTrajectory ct = integrate_costate(sys, traj, u, eta, p.config.integrator_tol);

  // adjoint-equation residual: the given rows against the re-integrated arc
  double adjoint_residual = 0.0;
  double scale = 0.0;
  for (const Vec& row : zrows) {
    double t = row[0];
    Vec zgiven(row.begin() + 2, row.end());
    Vec zref = ct.eval_components(t);
    adjoint_residual = std::max(adjoint_residual, norm(zgiven - zref));
    scale = std::max(scale, norm(zref));
  }
  double adjoint_tol = std::max(1e-6, 1e-6 * scale);

  PmpResidual pr = pmp_residual(sys, traj, u, ct, 64, p.config.seed);
  Vec x0b = traj.states.front().coords;
  Vec xTb = traj.states.back().coords;
  CostDifferential dl = p.cost.differential(x0b, xTb);
  double trans = transversality_residual(ct.initial().components, ct.terminal().components,
                                         lambda0, dl, p.endpoint_set, x0b, xTb);
  double nontrivial = nontriviality_margin(lambda0, ct);

  bool adjoint_ok = adjoint_residual <= adjoint_tol;
  bool max_ok = pr.max_residual <= p.config.residual_pass;
  bool trans_ok = trans <= p.config.residual_pass;
  bool nontrivial_ok = nontrivial >= 1e-8;
  bool pass = adjoint_ok && max_ok && trans_ok && nontrivial_ok;

  ensure_dir(dir);
  std::ofstream rep(dir + "/verify_report.txt", std::ios::binary);
  rep << "problem: " << p.name << "\n";
  rep << "lambda0: " << lambda0 << "\n";
  rep << "adjoint_residual: " << fmt17(adjoint_residual) << " (tol " << fmt17(adjoint_tol)
      << ", " << (adjoint_ok ? "pass" : "FAIL") << ")\n";
  rep << "max_residual: " << fmt17(pr.max_residual) << " ("
      << (max_ok ? "pass" : "FAIL") << ")\n";
  rep << "integral_residual: " << fmt17(pr.integral_residual) << "\n";
  rep << "transversality_residual: " << fmt17(trans) << " ("
      << (trans_ok ? "pass" : "FAIL") << ")\n";
  rep << "nontriviality: " << fmt17(nontrivial) << " ("
      << (nontrivial_ok ? "pass" : "FAIL") << ")\n";
  rep << "pass: " << (pass ? "yes" : "no") << "\n";

  log << "verify: " << p.name << " adjoint=" << adjoint_residual
      << " max_residual=" << pr.max_residual << " transversality=" << trans
      << " nontriviality=" << nontrivial << " pass=" << (pass ? "yes" : "no") << "\n";
  return pass ? kExitPass : kExitCertificateFail;
}

// ---------------------------------------------------------------------------
// catalog
// ---------------------------------------------------------------------------

inline int cmd_catalog(std::ostream& out) {
  out << "built-in problems:\n";
  for (const std::string& name : catalog_names()) {
    std::string resolved = name == "galerkin-heat:n" ? "galerkin-heat:8" : name;
    CatalogEntry e = catalog_entry(resolved);
    out << "  " << name << "  -  " << e.description << "\n";
  }
  return kExitPass;
}

}  // namespace pmpt
