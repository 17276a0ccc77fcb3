// Command-line front end: simulate, chatter, certify, solve, verify, catalog.

#include <clocale>
#include <iostream>

#include <CLI11.hpp>

#include "pmpt/cli_commands.hpp"

int main(int argc, char** argv) {
  std::setlocale(LC_ALL, "C");

  CLI::App app{"Pontryagin-principle toolkit for control systems on charted manifolds"};
  app.require_subcommand(1);

  std::string out_dir = "out";
  double tol = 0.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t budget = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--tol", tol, "integrator tolerance override");
    sub->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--budget", budget, "sampling budget override");
  };

  // simulate
  auto* sim = app.add_subcommand("simulate", "integrate a problem and write trajectory.csv");
  std::string sim_problem, sim_control;
  sim->add_option("problem", sim_problem, "problem file or catalog name")->required();
  sim->add_option("--control", sim_control, "control CSV (defaults to the problem's guess)");
  add_common(sim);

  // chatter
  auto* chat = app.add_subcommand("chatter", "chattering-partition convergence experiment");
  std::vector<double> chat_weights;
  std::size_t chat_rlo = 4, chat_rhi = 256;
  std::string chat_spec = "const:1,-1";
  double chat_T = 1.0;
  chat->add_option("--weights", chat_weights, "convex atom weights")->required();
  chat->add_option("--r-min", chat_rlo, "smallest block count")->capture_default_str();
  chat->add_option("--r-max", chat_rhi, "largest block count (doubling)")->capture_default_str();
  chat->add_option("--integrand", chat_spec, "integrand spec, e.g. const:1,-1 or sin:1,2")
      ->capture_default_str();
  chat->add_option("--horizon", chat_T, "time horizon")->capture_default_str();
  add_common(chat);

  // certify
  auto* cert = app.add_subcommand("certify", "variation-rate and pseudometric certificates");
  std::string cert_problem, cert_which;
  cert->add_option("problem", cert_problem, "problem file or catalog name")->required();
  cert->add_option("which", cert_which, "linear | second | rho")->required();
  add_common(cert);

  // solve
  auto* slv = app.add_subcommand("solve", "run the full solve pipeline");
  std::string solve_problem;
  slv->add_option("problem", solve_problem, "problem file or catalog name")->required();
  add_common(slv);

  // verify
  auto* ver = app.add_subcommand("verify", "re-check residuals of solve outputs in --out");
  std::string verify_problem;
  ver->add_option("problem", verify_problem, "problem file or catalog name")->required();
  add_common(ver);

  // catalog
  app.add_subcommand("catalog", "list built-in problems");

  CLI11_PARSE(app, argc, argv);

  auto with_overrides = [&](pmpt::Problem& p) {
    if (tol > 0) p.config.integrator_tol = tol;
    if (seed_set) p.config.seed = seed;
    if (budget > 0) p.config.probe_budget = budget;
  };

  try {
    if (sim->parsed()) {
      pmpt::Problem p = pmpt::load_problem(sim_problem);
      with_overrides(p);
      pmpt::ensure_dir(out_dir);
      pmpt::Control u =
          sim_control.empty() ? p.initial_control : pmpt::read_control_csv(sim_control);
      pmpt::Trajectory traj =
          pmpt::integrate(*p.system, p.initial_point, u, p.config.integrator_tol);
      pmpt::export_trajectory_csv(traj, out_dir + "/trajectory.csv");
      std::cout << "wrote " << out_dir << "/trajectory.csv\n";
      return pmpt::kExitPass;
    }
    if (chat->parsed())
      return pmpt::cmd_chatter(chat_weights, chat_rlo, chat_rhi, chat_spec, chat_T, out_dir,
                               std::cout);
    if (cert->parsed()) return pmpt::cmd_certify(cert_problem, cert_which, out_dir, std::cout);
    if (slv->parsed()) {
      pmpt::Problem p = pmpt::load_problem(solve_problem);
      with_overrides(p);
      pmpt::SolveReport report = pmpt::solve(p);
      pmpt::write_solve_report(report, p, out_dir);
      std::cout << "solve: lambda0=" << report.lambda0 << " cost="
                << pmpt::fmt17(report.cost_value) << " phi=" << pmpt::fmt17(report.phi_value)
                << " pass=" << (report.pass(p.config.residual_pass) ? "yes" : "no") << "\n";
      return report.pass(p.config.residual_pass) ? pmpt::kExitPass
                                                 : pmpt::kExitCertificateFail;
    }
    if (ver->parsed()) {
      pmpt::Problem p = pmpt::load_problem(verify_problem);
      with_overrides(p);
      return pmpt::cmd_verify(verify_problem, out_dir, std::cout);
    }
    return pmpt::cmd_catalog(std::cout);
  } catch (const pmpt::ParseError& ex) {
    std::cerr << "parse error: " << ex.what() << "\n";
    return pmpt::kExitParse;
  } catch (const pmpt::BlowUp& ex) {
    std::cerr << "numerical failure: " << ex.what() << "\n";
    return pmpt::kExitNumerical;
  } catch (const pmpt::NonFiniteState& ex) {
    std::cerr << "numerical failure: " << ex.what() << "\n";
    return pmpt::kExitNumerical;
  } catch (const pmpt::Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return pmpt::kExitNumerical;
  }
}
