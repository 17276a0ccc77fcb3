#pragma once

#include <fstream>
#include <set>

#include <json.hpp>

#include "pmpt/catalog.hpp"

namespace pmpt {

namespace io {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ParseError("unknown field '" + it.key() + "' in " + where);
}

inline Vec parse_vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError("field '" + where + "' must be an array of numbers");
  Vec v;
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError("field '" + where + "' must contain numbers only");
    v.push_back(x.get<double>());
  }
  return v;
}

inline Mat parse_mat(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ParseError("field '" + where + "' must be a matrix");
  std::size_t cols = 0;
  std::vector<Vec> rows;
  for (const auto& r : j) {
    Vec row = parse_vec(r, where);
    if (cols == 0) cols = row.size();
    if (row.size() != cols) throw ParseError("ragged matrix in field '" + where + "'");
    rows.push_back(std::move(row));
  }
  Mat m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = rows[i][c];
  return m;
}

inline ControlSet parse_control_set(const json& j) {
  if (!j.is_object() || !j.contains("type"))
    throw ParseError("field 'control_set' needs a 'type'");
  std::string type = j.at("type").get<std::string>();
  if (type == "box") {
    reject_unknown(j, {"type", "lo", "hi"}, "control_set");
    Vec lo = parse_vec(j.at("lo"), "control_set.lo");
    Vec hi = parse_vec(j.at("hi"), "control_set.hi");
    if (lo.size() != hi.size()) throw ParseError("control_set box lo/hi size mismatch");
    return box_set(std::move(lo), std::move(hi));
  }
  if (type == "finite") {
    reject_unknown(j, {"type", "values"}, "control_set");
    std::vector<Vec> vals;
    for (const auto& v : j.at("values")) vals.push_back(parse_vec(v, "control_set.values"));
    if (vals.empty()) throw ParseError("control_set finite needs at least one value");
    return finite_set(std::move(vals));
  }
  if (type == "ball") {
    reject_unknown(j, {"type", "center", "radius"}, "control_set");
    return ball_set(parse_vec(j.at("center"), "control_set.center"),
                    j.at("radius").get<double>());
  }
  throw ParseError("unknown control_set type '" + type + "'");
}

inline EndpointSet parse_endpoint_set(const json& j, std::size_t n) {
  if (!j.is_object() || !j.contains("variant"))
    throw ParseError("field 'endpoint_set' needs a 'variant'");
  std::string variant = j.at("variant").get<std::string>();
  auto check_dim = [n](const Vec& v, const std::string& where) {
    if (v.size() != n)
      throw ParseError("field '" + where + "' has the wrong dimension");
  };
  if (variant == "free") {
    reject_unknown(j, {"variant"}, "endpoint_set");
    return endpoint_free();
  }
  if (variant == "fixed_start") {
    reject_unknown(j, {"variant", "a"}, "endpoint_set");
    Vec a = parse_vec(j.at("a"), "endpoint_set.a");
    check_dim(a, "endpoint_set.a");
    return endpoint_fixed_start(std::move(a));
  }
  if (variant == "fixed_pair") {
    reject_unknown(j, {"variant", "a", "b"}, "endpoint_set");
    Vec a = parse_vec(j.at("a"), "endpoint_set.a");
    Vec b = parse_vec(j.at("b"), "endpoint_set.b");
    check_dim(a, "endpoint_set.a");
    check_dim(b, "endpoint_set.b");
    return endpoint_fixed_pair(std::move(a), std::move(b));
  }
  if (variant == "level_set") {
    reject_unknown(j, {"variant", "a", "rows", "offsets"}, "endpoint_set");
    Vec a = j.contains("a") ? parse_vec(j.at("a"), "endpoint_set.a") : Vec{};
    if (!a.empty()) check_dim(a, "endpoint_set.a");
    Mat rows = parse_mat(j.at("rows"), "endpoint_set.rows");
    if (rows.cols() != n) throw ParseError("endpoint_set.rows has the wrong column count");
    Vec offsets = parse_vec(j.at("offsets"), "endpoint_set.offsets");
    if (offsets.size() != rows.rows())
      throw ParseError("endpoint_set.offsets size does not match rows");
    return endpoint_level_set(std::move(a), std::move(rows), std::move(offsets));
  }
  if (variant == "ball_target") {
    reject_unknown(j, {"variant", "a", "center", "radius"}, "endpoint_set");
    Vec a = j.contains("a") ? parse_vec(j.at("a"), "endpoint_set.a") : Vec{};
    if (!a.empty()) check_dim(a, "endpoint_set.a");
    Vec center = parse_vec(j.at("center"), "endpoint_set.center");
    check_dim(center, "endpoint_set.center");
    return endpoint_ball_target(std::move(a), std::move(center), j.at("radius").get<double>());
  }
  throw ParseError("unknown endpoint_set variant '" + variant + "'");
}

inline EndpointCostFn parse_cost(const json& j, const ManifoldPtr& m) {
  const std::size_t n = m->dim;
  if (!j.is_object() || !j.contains("type")) throw ParseError("field 'cost' needs a 'type'");
  std::string type = j.at("type").get<std::string>();
  if (type == "zero") {
    reject_unknown(j, {"type"}, "cost");
    return zero_cost(n);
  }
  if (type == "terminal_coordinate") {
    reject_unknown(j, {"type", "index", "scale"}, "cost");
    std::size_t idx = j.at("index").get<std::size_t>();
    if (idx >= n) throw ParseError("cost.index out of range");
    double scale = j.contains("scale") ? j.at("scale").get<double>() : 1.0;
    EndpointCostFn c;
    c.value = [idx, scale](const Vec&, const Vec& xT) { return scale * xT[idx]; };
    c.differential = [idx, scale, n](const Vec&, const Vec&) {
      Vec xi = zeros(n);
      xi[idx] = scale;
      return CostDifferential{zeros(n), xi};
    };
    return c;
  }
  if (type == "terminal_quadratic") {
    reject_unknown(j, {"type", "center", "scale"}, "cost");
    Vec center = j.contains("center") ? parse_vec(j.at("center"), "cost.center") : zeros(n);
    if (center.size() != n) throw ParseError("cost.center has the wrong dimension");
    double scale = j.contains("scale") ? j.at("scale").get<double>() : 0.5;
    EndpointCostFn c;
    c.value = [center, scale](const Vec&, const Vec& xT) {
      Vec d = xT - center;
      return scale * dot(d, d);
    };
    c.differential = [center, scale, n](const Vec&, const Vec& xT) {
      return CostDifferential{zeros(n), (2.0 * scale) * (xT - center)};
    };
    return c;
  }
  if (type == "ambient_dot") {
    reject_unknown(j, {"type", "target", "scale"}, "cost");
    Vec target = parse_vec(j.at("target"), "cost.target");
    double scale = j.contains("scale") ? j.at("scale").get<double>() : -1.0;
    EndpointCostFn c;
    c.value = [m, target, scale](const Vec&, const Vec& xT) {
      return scale * dot(m->to_ambient(0, xT), target);
    };
    c.differential = [m, target, scale, n](const Vec&, const Vec& xT) {
      Mat jac = m->ambient_jacobian(0, xT);
      return CostDifferential{zeros(n), scale * matTvec(jac, target)};
    };
    return c;
  }
  throw ParseError("unknown cost type '" + type + "'");
}

inline void parse_field(const json& j, ControlSystem& sys) {
  const std::size_t n = sys.manifold->dim;
  if (!j.is_object() || !j.contains("type")) throw ParseError("field 'field' needs a 'type'");
  std::string type = j.at("type").get<std::string>();
  if (type == "linear") {
    // xdot = A x + B u
    reject_unknown(j, {"type", "A", "B"}, "field");
    Mat a = parse_mat(j.at("A"), "field.A");
    Mat b = parse_mat(j.at("B"), "field.B");
    if (a.rows() != n || a.cols() != n) throw ParseError("field.A has the wrong shape");
    if (b.rows() != n) throw ParseError("field.B has the wrong row count");
    sys.field = [a, b](double, int, const Vec& x, const Vec& u) {
      return matvec(a, x) + matvec(b, u);
    };
    sys.field_x = [a](double, int, const Vec&, const Vec&) { return a; };
    sys.control_affine = true;
    return;
  }
  if (type == "sphere_tangent") {
    reject_unknown(j, {"type"}, "field");
    if (sys.manifold->name != "sphere2")
      throw ParseError("field sphere_tangent requires the sphere2 manifold");
    sys.field = [](double, int chart, const Vec& x, const Vec& u) {
      return catalog::sphere_tangent_field(chart, x, u);
    };
    sys.field_x = make_fd_field_x(sys.field);
    sys.control_affine = true;
    return;
  }
  if (type == "rigid_body") {
    reject_unknown(j, {"type"}, "field");
    if (sys.manifold->name != "so3")
      throw ParseError("field rigid_body requires the so3 manifold");
    sys.field = [](double, int, const Vec& w, const Vec& u) {
      return matvec(so3::right_jacobian_inv(w), u);
    };
    sys.field_x = make_fd_field_x(sys.field);
    sys.control_affine = true;
    return;
  }
  if (type == "polynomial") {
    // components[i] is a list of monomials {coeff, x: powers, u: powers}
    reject_unknown(j, {"type", "components"}, "field");
    struct Term {
      double coeff = 0.0;
      std::vector<int> xpow, upow;
    };
    auto comps = std::make_shared<std::vector<std::vector<Term>>>();
    if (!j.contains("components") || !j.at("components").is_array() ||
        j.at("components").size() != n)
      throw ParseError("field.components must list one term set per state dimension");
    bool affine = true;
    for (const auto& comp : j.at("components")) {
      std::vector<Term> terms;
      for (const auto& tj : comp) {
        reject_unknown(tj, {"coeff", "x", "u"}, "field.components");
        Term term;
        term.coeff = tj.at("coeff").get<double>();
        if (tj.contains("x"))
          for (const auto& p : tj.at("x")) term.xpow.push_back(p.get<int>());
        if (tj.contains("u"))
          for (const auto& p : tj.at("u")) term.upow.push_back(p.get<int>());
        if (term.xpow.size() > n) throw ParseError("field term has too many state powers");
        int udeg = 0;
        for (int p : term.upow) {
          if (p < 0) throw ParseError("field term powers must be nonnegative");
          udeg += p;
        }
        for (int p : term.xpow)
          if (p < 0) throw ParseError("field term powers must be nonnegative");
        if (udeg > 1) affine = false;
        terms.push_back(std::move(term));
      }
      comps->push_back(std::move(terms));
    }
    auto eval_term = [](const Term& t, const Vec& x, const Vec& u) {
      double v = t.coeff;
      for (std::size_t i = 0; i < t.xpow.size(); ++i)
        for (int p = 0; p < t.xpow[i]; ++p) v *= x[i];
      for (std::size_t i = 0; i < t.upow.size() && i < u.size(); ++i)
        for (int p = 0; p < t.upow[i]; ++p) v *= u[i];
      return v;
    };
    sys.field = [comps, eval_term, n](double, int, const Vec& x, const Vec& u) {
      Vec out(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (const Term& t : (*comps)[i]) out[i] += eval_term(t, x, u);
      return out;
    };
    sys.field_x = [comps, eval_term, n](double, int, const Vec& x, const Vec& u) {
      Mat a(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (const Term& t : (*comps)[i])
          for (std::size_t k = 0; k < t.xpow.size(); ++k) {
            if (t.xpow[k] == 0) continue;
            Term dt = t;
            dt.coeff *= double(t.xpow[k]);
            dt.xpow[k] -= 1;
            a(i, k) += eval_term(dt, x, u);
          }
      return a;
    };
    sys.control_affine = affine;
    return;
  }
  throw ParseError("unknown field type '" + type + "'");
}

inline Control parse_initial_control(const json& j, std::size_t udim, double horizon) {
  if (!j.is_object()) throw ParseError("field 'initial_control' must be an object");
  if (j.contains("knots")) {
    reject_unknown(j, {"knots", "value"}, "initial_control");
    std::size_t k = j.at("knots").get<std::size_t>();
    if (k < 1) throw ParseError("initial_control.knots must be positive");
    Vec value = j.contains("value") ? parse_vec(j.at("value"), "initial_control.value")
                                    : zeros(udim);
    if (value.size() != udim)
      throw ParseError("initial_control.value has the wrong control dimension");
    return uniform_control(std::vector<Vec>(k, value), horizon);
  }
  reject_unknown(j, {"grid", "values"}, "initial_control");
  Control c;
  c.grid = parse_vec(j.at("grid"), "initial_control.grid");
  for (const auto& v : j.at("values")) c.values.push_back(parse_vec(v, "initial_control.values"));
  if (c.grid.size() != c.values.size() + 1)
    throw ParseError("initial_control needs one more grid knot than values");
  for (const Vec& v : c.values)
    if (v.size() != udim) throw ParseError("initial_control.values has the wrong dimension");
  return c;
}

}  // namespace io

// Parses a version-1 problem file. Unknown fields are rejected with the
// field name. A {"catalog": "<name>"} file loads a built-in with optional
// overrides.
inline Problem parse_problem_json(const nlohmann::json& j) {
  using nlohmann::json;
  if (!j.is_object()) throw ParseError("problem file must be a JSON object");
  if (!j.contains("version")) throw ParseError("missing field 'version'");
  if (!j.at("version").is_number_integer() || j.at("version").get<int>() != 1)
    throw ParseError("field 'version' must be the integer 1");

  auto apply_overrides = [](Problem& p, const json& jj) {
    if (jj.contains("seed")) p.config.seed = jj.at("seed").get<std::uint64_t>();
    if (jj.contains("tube_radius")) p.config.tube_radius = jj.at("tube_radius").get<double>();
    if (jj.contains("probe_budget"))
      p.config.probe_budget = jj.at("probe_budget").get<std::size_t>();
    if (jj.contains("tolerances")) {
      const json& t = jj.at("tolerances");
      io::reject_unknown(t, {"integrator", "residual", "descent_stop"}, "tolerances");
      if (t.contains("integrator")) p.config.integrator_tol = t.at("integrator").get<double>();
      if (t.contains("residual")) p.config.residual_pass = t.at("residual").get<double>();
      if (t.contains("descent_stop")) p.config.descent_stop = t.at("descent_stop").get<double>();
    }
  };

  if (j.contains("catalog")) {
    io::reject_unknown(j, {"version", "catalog", "seed", "tube_radius", "probe_budget",
                           "tolerances"},
                       "problem file");
    CatalogEntry e = catalog_entry(j.at("catalog").get<std::string>());
    apply_overrides(e.problem, j);
    return e.problem;
  }

  io::reject_unknown(j,
                     {"version", "name", "manifold", "field", "control_set", "horizon", "cost",
                      "endpoint_set", "initial_point", "initial_control", "seed", "tube_radius",
                      "probe_budget", "tolerances"},
                     "problem file");
  for (const char* required : {"manifold", "field", "control_set", "horizon", "cost",
                               "endpoint_set", "initial_point", "initial_control"})
    if (!j.contains(required)) throw ParseError(std::string("missing field '") + required + "'");

  Problem p;
  p.name = j.contains("name") ? j.at("name").get<std::string>() : "problem";

  auto sys = std::make_shared<ControlSystem>();
  sys->manifold = manifold_by_name(j.at("manifold").get<std::string>());
  sys->control_set = io::parse_control_set(j.at("control_set"));
  sys->horizon = j.at("horizon").get<double>();
  if (!(sys->horizon > 0.0)) throw ParseError("field 'horizon' must be positive");
  io::parse_field(j.at("field"), *sys);

  p.cost = io::parse_cost(j.at("cost"), sys->manifold);
  p.endpoint_set = io::parse_endpoint_set(j.at("endpoint_set"), sys->manifold->dim);

  const nlohmann::json& ip = j.at("initial_point");
  io::reject_unknown(ip, {"chart", "coords"}, "initial_point");
  std::string chart = ip.contains("chart") ? ip.at("chart").get<std::string>()
                                           : sys->manifold->charts.front().id;
  Vec coords = io::parse_vec(ip.at("coords"), "initial_point.coords");
  if (coords.size() != sys->manifold->dim)
    throw ParseError("initial_point.coords has the wrong dimension");
  p.initial_point = make_point(*sys->manifold, chart, std::move(coords));

  p.initial_control =
      io::parse_initial_control(j.at("initial_control"), sys->control_set.dim(), sys->horizon);
  p.system = sys;
  apply_overrides(p, j);
  return p;
}

inline Problem load_problem(const std::string& ref) {
  // a file path, or a bare catalog name
  std::ifstream in(ref);
  if (in) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const std::exception& ex) {
      throw ParseError(std::string("problem file is not valid JSON: ") + ex.what());
    }
    return parse_problem_json(j);
  }
  return catalog_entry(ref).problem;
}

}  // namespace pmpt
