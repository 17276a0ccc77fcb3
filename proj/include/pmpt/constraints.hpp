#pragma once

#include "pmpt/variations.hpp"

namespace pmpt {

// ---------------------------------------------------------------------------
// Slot sets: the factors of S inside a single chart's coordinates
// ---------------------------------------------------------------------------

struct SlotSet {
  enum class Kind { All, Point, Affine, Ball };
  Kind kind = Kind::All;

  Vec point;    // Point
  Mat rows;     // Affine: rows x = offsets, independent rows
  Vec offsets;
  Vec center;   // Ball: |x - center| <= radius
  double radius = 1.0;

  bool contains(const Vec& x, double tol = 1e-10) const {
    switch (kind) {
      case Kind::All: return true;
      case Kind::Point: return norm(x - point) <= tol;
      case Kind::Affine: {
        for (std::size_t i = 0; i < rows.rows(); ++i)
          if (std::abs(dot(rows.row(i), x) - offsets[i]) > tol) return false;
        return true;
      }
      case Kind::Ball: return norm(x - center) <= radius + tol;
    }
    return false;
  }

  Vec nearest(const Vec& x) const {
    switch (kind) {
      case Kind::All: return x;
      case Kind::Point: return point;
      case Kind::Affine: {
        // x - A^T (A A^T)^{-1} (A x - b)
        const std::size_t k = rows.rows();
        Mat aat(k, k);
        Vec resid(k);
        for (std::size_t i = 0; i < k; ++i) {
          resid[i] = dot(rows.row(i), x) - offsets[i];
          for (std::size_t j = 0; j < k; ++j) aat(i, j) = dot(rows.row(i), rows.row(j));
        }
        Vec mult = solve(aat, resid);
        Vec out = x;
        for (std::size_t i = 0; i < k; ++i) out -= mult[i] * rows.row(i);
        return out;
      }
      case Kind::Ball: {
        Vec d = x - center;
        double nd = norm(d);
        if (nd <= radius) return x;
        return center + (radius / nd) * d;
      }
    }
    return x;
  }

  double distance(const Vec& x) const { return norm(x - nearest(x)); }
};

inline SlotSet slot_all() { return SlotSet{}; }
inline SlotSet slot_point(Vec p) {
  SlotSet s;
  s.kind = SlotSet::Kind::Point;
  s.point = std::move(p);
  return s;
}
inline SlotSet slot_affine(Mat rows, Vec offsets) {
  SlotSet s;
  s.kind = SlotSet::Kind::Affine;
  s.rows = std::move(rows);
  s.offsets = std::move(offsets);
  return s;
}
inline SlotSet slot_ball(Vec center, double radius) {
  SlotSet s;
  s.kind = SlotSet::Kind::Ball;
  s.center = std::move(center);
  s.radius = radius;
  return s;
}

// Normal cone at a boundary point: a subspace part plus ray generators.
struct NormalCone {
  bool full = false;      // entire dual space (point constraints)
  std::vector<Vec> lin;   // two-sided generators (affine constraints)
  std::vector<Vec> rays;  // one-sided generators (active inequalities)

  Vec project(const Vec& w) const {
    if (full) return w;
    Vec p = zeros(w.size());
    Vec res = w;
    std::vector<Vec> ortho;
    for (const Vec& g : lin) {
      Vec q = g;
      for (const Vec& o : ortho) q = axpy(-dot(q, o), o, q);
      double nq = norm(q);
      if (nq < 1e-12) continue;
      q *= 1.0 / nq;
      ortho.push_back(q);
      double c = dot(res, q);
      p += c * q;
      res = axpy(-c, q, res);
    }
    for (const Vec& r : rays) {
      double nr = norm(r);
      if (nr < 1e-12) continue;
      double c = std::max(0.0, dot(res, r) / (nr * nr));
      p += c * r;
      res = axpy(-c, r, res);
    }
    return p;
  }

  double distance_to(const Vec& w) const { return norm(w - project(w)); }
};

inline NormalCone slot_normal_cone(const SlotSet& s, const Vec& boundary_point,
                                   double tol = 1e-9) {
  NormalCone cone;
  switch (s.kind) {
    case SlotSet::Kind::All: break;
    case SlotSet::Kind::Point: cone.full = true; break;
    case SlotSet::Kind::Affine:
      for (std::size_t i = 0; i < s.rows.rows(); ++i) cone.lin.push_back(s.rows.row(i));
      break;
    case SlotSet::Kind::Ball: {
      Vec d = boundary_point - s.center;
      if (std::abs(norm(d) - s.radius) <= tol * std::max(1.0, s.radius) + tol)
        cone.rays.push_back((1.0 / norm(d)) * d);
      break;  // interior: cone {0}
    }
  }
  return cone;
}

// ---------------------------------------------------------------------------
// Endpoint sets S = slot0 x slot1, described in base-chart coordinates
// ---------------------------------------------------------------------------

struct EndpointSet {
  enum class Variant { Free, FixedStart, FixedPair, LevelSet, BallTarget };
  Variant variant = Variant::Free;
  SlotSet slot0, slot1;

  bool contains(const Vec& x0, const Vec& xT, double tol = 1e-10) const {
    return slot0.contains(x0, tol) && slot1.contains(xT, tol);
  }

  bool start_pinned() const { return slot0.kind == SlotSet::Kind::Point; }
};

inline EndpointSet endpoint_free() {
  return EndpointSet{EndpointSet::Variant::Free, slot_all(), slot_all()};
}
inline EndpointSet endpoint_fixed_start(Vec a) {
  return EndpointSet{EndpointSet::Variant::FixedStart, slot_point(std::move(a)), slot_all()};
}
inline EndpointSet endpoint_fixed_pair(Vec a, Vec b) {
  return EndpointSet{EndpointSet::Variant::FixedPair, slot_point(std::move(a)),
                     slot_point(std::move(b))};
}
inline EndpointSet endpoint_level_set(Vec a, Mat rows, Vec offsets) {
  EndpointSet s{EndpointSet::Variant::LevelSet,
                a.empty() ? slot_all() : slot_point(std::move(a)),
                slot_affine(std::move(rows), std::move(offsets))};
  return s;
}
inline EndpointSet endpoint_ball_target(Vec a, Vec center, double radius) {
  EndpointSet s{EndpointSet::Variant::BallTarget,
                a.empty() ? slot_all() : slot_point(std::move(a)),
                slot_ball(std::move(center), radius)};
  return s;
}

// ---------------------------------------------------------------------------
// Distance surrogate Phi in Lagrangian-chart image coordinates
// ---------------------------------------------------------------------------

// Phi(q, q') = distance of the psi-image endpoint pair to the image of S.
// The psi maps act by translation on the tube, so per-slot Euclidean
// distances are evaluated directly in base-chart coordinates.
struct DistanceSurrogate {
  EndpointSet set;
  LagrangianChartPtr lchart;
  double horizon = 1.0;

  Vec base_coords_start(const Vec& x0hat) const { return x0hat; }  // psi_0 = phi
  Vec base_coords_end(const Vec& xThat) const {
    return xThat - lchart->x0_star + lchart->ref_coords(horizon);
  }
};

inline DistanceSurrogate make_distance_surrogate(EndpointSet set, LagrangianChartPtr lchart,
                                                 double horizon) {
  return DistanceSurrogate{std::move(set), std::move(lchart), horizon};
}

// phi in reduced coordinates (arguments are psi-image coordinates).
inline double phi(const DistanceSurrogate& ds, const Vec& x0hat, const Vec& xThat) {
  double d0 = ds.set.slot0.distance(ds.base_coords_start(x0hat));
  double d1 = ds.set.slot1.distance(ds.base_coords_end(xThat));
  return std::sqrt(d0 * d0 + d1 * d1);
}

struct DistanceSubgradient {
  bool on_set = false;
  Vec slot0, slot1;        // unit product covector when off the set
  NormalCone cone0, cone1; // generators when on the set
};

inline DistanceSubgradient distance_subgradient(const DistanceSurrogate& ds, const Vec& x0hat,
                                                const Vec& xThat) {
  Vec x0 = ds.base_coords_start(x0hat);
  Vec xT = ds.base_coords_end(xThat);
  Vec n0 = ds.set.slot0.nearest(x0);
  Vec n1 = ds.set.slot1.nearest(xT);
  double d0 = norm(x0 - n0), d1 = norm(xT - n1);
  double d = std::sqrt(d0 * d0 + d1 * d1);

  DistanceSubgradient out;
  if (d <= 1e-12) {
    out.on_set = true;
    out.cone0 = slot_normal_cone(ds.set.slot0, x0);
    out.cone1 = slot_normal_cone(ds.set.slot1, xT);
    out.slot0 = zeros(x0.size());
    out.slot1 = zeros(xT.size());
    return out;
  }
  out.slot0 = (1.0 / d) * (x0 - n0);
  out.slot1 = (1.0 / d) * (xT - n1);
  return out;
}

// ---------------------------------------------------------------------------
// Weak-controllability probe
// ---------------------------------------------------------------------------

struct ProbeResult {
  double delta_hat = 0.0;  // most negative directional quotient found
  VariationSpec best;
  std::size_t samples_used = 0;
  bool controllable(double tol = 1e-6) const { return delta_hat < -tol; }
};

// Samples variation directions and measures the decrease rate of Phi along
// them. Start directions are pinned to zero when slot0 fixes the initial
// point; the solver never moves a pinned start.
inline ProbeResult weak_controllability_probe(const ControlPair& pair,
                                              const DistanceSurrogate& ds,
                                              std::size_t sample_budget,
                                              const ReducedSystem& rs, double tol = 1e-9,
                                              std::uint64_t seed = 0) {
  ProbeResult res;
  const std::size_t n = rs.dim();

  EndpointCost cost = [&ds](const Vec& a, const Vec& b) { return phi(ds, a, b); };

  if (ds.set.variant == EndpointSet::Variant::Free) {
    res.best = VariationSpec{zeros(n), dirac(pair.u)};
    return res;  // Phi is identically zero
  }

  std::vector<Vec> v0s = {zeros(n)};
  if (!ds.set.start_pinned()) {
    Halton hv(n, derive_seed(seed, 31));
    for (std::size_t i = 0; i < 8; ++i) {
      Vec v = to_ball(hv.next(), zeros(n), 1.0);
      double nv = norm(v);
      if (nv > 1e-9) v *= 1.0 / nv;
      v0s.push_back(std::move(v));
    }
  }

  std::vector<Vec> atoms = rs.control_set().extreme_points();
  std::size_t extra = sample_budget > atoms.size() * v0s.size()
                          ? (sample_budget - atoms.size() * v0s.size()) / std::max<std::size_t>(v0s.size(), 1)
                          : 0;
  for (const Vec& u : rs.control_set().sample(extra, derive_seed(seed, 37))) atoms.push_back(u);

  Vec probe_lambdas = {1.0 / 16, 1.0 / 32, 1.0 / 64};

  bool first = true;
  for (const Vec& v0 : v0s) {
    for (const Vec& atom : atoms) {
      VariationSpec spec{v0, dirac(constant_control(atom, rs.horizon()))};
      DirectionalQuotient dq = directional_quotient(cost, pair, spec, rs, probe_lambdas, tol);
      ++res.samples_used;
      if (dq.lambdas.empty()) continue;
      if (first || dq.estimate < res.delta_hat) {
        res.delta_hat = dq.estimate;
        res.best = spec;
        first = false;
      }
      if (res.samples_used >= sample_budget && !first) return res;
    }
  }
  return res;
}

}  // namespace pmpt
