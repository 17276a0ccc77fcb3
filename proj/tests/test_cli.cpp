#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pmpt/cli_commands.hpp"

using namespace pmpt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("pmpt_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  fs::path p = dir / name;
  std::ofstream out(p, std::ios::binary);
  out << text;
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
#ifdef PMPT_CLI_PATH
  std::string cmd = std::string(PMPT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
#else
  (void)args;
  return -1;
#endif
}

}  // namespace

TEST_CASE("problem files parse strictly") {
  SUBCASE("version is mandatory and fixed") {
    CHECK_THROWS_AS((void)parse_problem_json(nlohmann::json{{"catalog", "bang1d"}}), ParseError);
    CHECK_THROWS_AS(
        (void)parse_problem_json(nlohmann::json{{"version", 2}, {"catalog", "bang1d"}}),
        ParseError);
  }
  SUBCASE("unknown fields are named in the diagnostic") {
    nlohmann::json j{{"version", 1}, {"catalog", "bang1d"}, {"frobnicate", 3}};
    try {
      (void)parse_problem_json(j);
      CHECK(false);
    } catch (const ParseError& ex) {
      CHECK(std::string(ex.what()).find("frobnicate") != std::string::npos);
    }
  }
  SUBCASE("catalog reference with overrides") {
    nlohmann::json j{{"version", 1}, {"catalog", "bang1d"}, {"seed", 7},
                     {"tolerances", {{"integrator", 1e-8}}}};
    Problem p = parse_problem_json(j);
    CHECK(p.config.seed == 7);
    CHECK(p.config.integrator_tol == 1e-8);
  }
  SUBCASE("full custom problem") {
    nlohmann::json j{
        {"version", 1},
        {"name", "lq-test"},
        {"manifold", "euclidean:2"},
        {"field", {{"type", "linear"}, {"A", {{0.0, 1.0}, {0.0, 0.0}}}, {"B", {{0.0}, {1.0}}}}},
        {"control_set", {{"type", "box"}, {"lo", {-1.0}}, {"hi", {1.0}}}},
        {"horizon", 2.0},
        {"cost", {{"type", "terminal_coordinate"}, {"index", 0}, {"scale", -1.0}}},
        {"endpoint_set",
         {{"variant", "level_set"}, {"a", {0.0, 0.0}}, {"rows", {{0.0, 1.0}}}, {"offsets", {0.0}}}},
        {"initial_point", {{"coords", {0.0, 0.0}}}},
        {"initial_control", {{"knots", 16}, {"value", {0.0}}}}};
    Problem p = parse_problem_json(j);
    CHECK(p.name == "lq-test");
    CHECK(p.system->control_affine);
    CHECK(p.system->horizon == 2.0);
    CHECK(p.endpoint_set.variant == EndpointSet::Variant::LevelSet);
    // behaves like the catalog double integrator
    Vec f = p.system->field(0.0, 0, {1.0, 2.0}, {0.5});
    CHECK(f[0] == 2.0);
    CHECK(f[1] == 0.5);
  }
  SUBCASE("polynomial field tables") {
    nlohmann::json j{
        {"version", 1},
        {"manifold", "euclidean:2"},
        {"field",
         {{"type", "polynomial"},
          {"components",
           {// dx1 = x2, dx2 = -0.5 x1^2 + u
            {{{"coeff", 1.0}, {"x", {0, 1}}}},
            {{{"coeff", -0.5}, {"x", {2, 0}}}, {{"coeff", 1.0}, {"u", {1}}}}}}}},
        {"control_set", {{"type", "box"}, {"lo", {-1.0}}, {"hi", {1.0}}}},
        {"horizon", 1.0},
        {"cost", {{"type", "zero"}}},
        {"endpoint_set", {{"variant", "free"}}},
        {"initial_point", {{"coords", {0.5, 0.0}}}},
        {"initial_control", {{"knots", 4}, {"value", {0.0}}}}};
    Problem p = parse_problem_json(j);
    CHECK(p.system->control_affine);  // u enters linearly
    Vec f = p.system->field(0.0, 0, {0.5, 2.0}, {0.25});
    CHECK(f[0] == doctest::Approx(2.0));
    CHECK(f[1] == doctest::Approx(-0.5 * 0.25 + 0.25));
    // analytic state derivative matches finite differences
    auto fd = make_fd_field_x(p.system->field);
    Mat a = p.system->field_x(0.0, 0, {0.5, 2.0}, {0.25});
    Mat b = fd(0.0, 0, {0.5, 2.0}, {0.25});
    CHECK(operator_norm(a - b) < 1e-8);
    // and the problem integrates
    Trajectory traj = integrate(*p.system, p.initial_point, p.initial_control, 1e-9);
    CHECK(traj.states.back().coords.size() == 2);

    nlohmann::json quad = j;
    quad["field"]["components"][1] = {{{"coeff", 1.0}, {"u", {2}}}};  // u^2 term
    Problem pq = parse_problem_json(quad);
    CHECK(!pq.system->control_affine);
  }
  SUBCASE("dimension mismatches are rejected") {
    nlohmann::json j{{"version", 1},
                     {"manifold", "euclidean:2"},
                     {"field", {{"type", "linear"}, {"A", {{0.0}}}, {"B", {{1.0}}}}},
                     {"control_set", {{"type", "box"}, {"lo", {-1.0}}, {"hi", {1.0}}}},
                     {"horizon", 1.0},
                     {"cost", {{"type", "zero"}}},
                     {"endpoint_set", {{"variant", "free"}}},
                     {"initial_point", {{"coords", {0.0, 0.0}}}},
                     {"initial_control", {{"knots", 4}, {"value", {0.0}}}}};
    CHECK_THROWS_AS((void)parse_problem_json(j), ParseError);
  }
}

TEST_CASE("control CSV round trip") {
  fs::path dir = temp_dir("controlcsv");
  Control u = uniform_control({Vec{0.5, -1.0}, Vec{-0.25, 0.75}}, 2.0);
  std::string path = (dir / "u.csv").string();
  write_control_csv(u, path);
  Control back = read_control_csv(path);
  REQUIRE(back.grid.size() == u.grid.size());
  for (std::size_t i = 0; i < u.grid.size(); ++i)
    CHECK(back.grid[i] == doctest::Approx(u.grid[i]).epsilon(1e-16));
  for (std::size_t i = 0; i < u.values.size(); ++i)
    CHECK(norm(back.values[i] - u.values[i]) == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("simulate bang1d with a custom control") {
  fs::path dir = temp_dir("simulate");
  // u = 1 throughout: x(1) = 1
  Control u = constant_control({1.0}, 1.0);
  std::string upath = (dir / "u.csv").string();
  write_control_csv(u, upath);
  std::ostringstream log;
  int code = cmd_simulate("bang1d", upath, dir.string(), 0.0, log);
  CHECK(code == kExitPass);
  std::string csv = slurp((dir / "trajectory.csv").string());
  CHECK(csv.rfind("t,chart,x1\n", 0) == 0);
  // final row reaches 1 to integrator accuracy
  auto last_nl = csv.find_last_of('\n', csv.size() - 2);
  std::string last = csv.substr(last_nl + 1);
  CHECK(last.rfind("1,0,0.9999", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("simulate the spectral heat problem against the closed form") {
  fs::path dir = temp_dir("galerkin");
  Control u = constant_control({0.0}, 1.0);
  std::string upath = (dir / "u.csv").string();
  write_control_csv(u, upath);
  std::ostringstream log;
  int code = cmd_simulate("galerkin-heat:4", upath, dir.string(), 0.0, log);
  CHECK(code == kExitPass);
  std::vector<Vec> rows = detail_csv::read_rows((dir / "trajectory.csv").string(), nullptr);
  CatalogEntry entry = catalog_entry("galerkin-heat:4");
  for (const Vec& row : rows) {
    Vec want = entry.known_trajectory_ambient(row[0]);
    Vec got(row.begin() + 2, row.end());
    CHECK(norm(got - want) < 1e-7);
  }
  fs::remove_all(dir);
}

TEST_CASE("chatter command emits the convergence table deterministically") {
  fs::path dir1 = temp_dir("chat1");
  fs::path dir2 = temp_dir("chat2");
  std::ostringstream log;
  CHECK(cmd_chatter({0.5, 0.5}, 4, 64, "const:1,-1", 1.0, dir1.string(), log) == kExitPass);
  CHECK(cmd_chatter({0.5, 0.5}, 4, 64, "const:1,-1", 1.0, dir2.string(), log) == kExitPass);
  std::string a = slurp((dir1 / "chatter.csv").string());
  std::string b = slurp((dir2 / "chatter.csv").string());
  CHECK(a == b);  // byte-identical
  CHECK(a.rfind("r,diameter,atom,error\n", 0) == 0);
  CHECK(a.find("4,0.25,1,0.0625") != std::string::npos);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("certify command writes certificates and exit codes") {
  fs::path dir = temp_dir("certify");
  std::ostringstream log;
  CHECK(cmd_certify("bang1d", "linear", dir.string(), log) == kExitPass);
  std::string csv = slurp((dir / "certificate_linear.csv").string());
  CHECK(csv.rfind("lambda,deviation,bound,pass\n", 0) == 0);
  CHECK(csv.find("# fitted_slope") != std::string::npos);
  CHECK(cmd_certify("bang1d", "rho", dir.string(), log) == kExitPass);
  CHECK_THROWS_AS((void)cmd_certify("bang1d", "sideways", dir.string(), log), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("solve and verify round trip") {
  fs::path dir = temp_dir("solveverify");
  std::ostringstream log;
  REQUIRE(cmd_solve("bang1d", dir.string(), log) == kExitPass);
  CHECK(fs::exists(dir / "solution_report.txt"));
  CHECK(fs::exists(dir / "solution_trajectory.csv"));
  CHECK(fs::exists(dir / "solution_costate.csv"));
  CHECK(fs::exists(dir / "solution_control.csv"));
  CHECK(fs::exists(dir / "iteration_log.csv"));

  SUBCASE("solver outputs verify clean") {
    CHECK(cmd_verify("bang1d", dir.string(), log) == kExitPass);
    std::string rep = slurp((dir / "verify_report.txt").string());
    CHECK(rep.find("pass: yes") != std::string::npos);
  }
  SUBCASE("a perturbed costate knot fails the adjoint check") {
    std::string path = (dir / "solution_costate.csv").string();
    std::vector<std::string> header;
    std::vector<Vec> rows = detail_csv::read_rows(path, &header);
    rows[rows.size() / 2][2] *= 1.1;
    {
      CsvWriter out(path);
      out.header(header);
      for (const Vec& r : rows) out.row(r);
    }
    CHECK(cmd_verify("bang1d", dir.string(), log) == kExitCertificateFail);
    std::string rep = slurp((dir / "verify_report.txt").string());
    CHECK(rep.find("adjoint_residual") != std::string::npos);
    CHECK(rep.find("pass: no") != std::string::npos);
  }
  SUBCASE("a zero costate with lambda0 = 0 fails nontriviality") {
    std::string path = (dir / "solution_costate.csv").string();
    std::vector<std::string> header;
    std::vector<Vec> rows = detail_csv::read_rows(path, &header);
    for (Vec& r : rows) r[2] = 0.0;
    {
      CsvWriter out(path);
      out.header(header);
      for (const Vec& r : rows) out.row(r);
    }
    // rewrite the report's multiplier
    std::string rp = (dir / "solution_report.txt").string();
    std::string text = slurp(rp);
    auto pos = text.find("lambda0: 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 10, "lambda0: 0");
    std::ofstream(rp, std::ios::binary) << text;
    CHECK(cmd_verify("bang1d", dir.string(), log) == kExitCertificateFail);
    std::string rep = slurp((dir / "verify_report.txt").string());
    CHECK(rep.find("nontriviality") != std::string::npos);
    CHECK(rep.find("pass: no") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("exit-code contract through the real binary") {
  if (run_cli("catalog") == -1) return;  // binary not available in this build
  fs::path dir = temp_dir("exitcodes");

  CHECK(run_cli("catalog") == 0);

  std::string bad = write_file(dir, "bad.json", "{\"version\": 1, \"catalog\": \"bang1d\"");
  CHECK(run_cli("simulate " + bad + " --out " + dir.string()) == 2);

  std::string unknown =
      write_file(dir, "unknown.json", "{\"version\": 1, \"catalog\": \"bang1d\", \"zzz\": 1}");
  CHECK(run_cli("simulate " + unknown + " --out " + dir.string()) == 2);

  CHECK(run_cli("simulate bang1d --out " + dir.string()) == 0);
  CHECK(run_cli("solve frozen2d --out " + (dir / "frozen").string()) == 0);
  fs::remove_all(dir);
}

TEST_CASE("catalog listing names every built-in") {
  std::ostringstream out;
  CHECK(cmd_catalog(out) == kExitPass);
  for (const char* name : {"bang1d", "double-integrator", "sphere-geodesic", "rigid-body",
                           "galerkin-heat:n", "frozen2d"})
    CHECK(out.str().find(name) != std::string::npos);
}
