#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "bilin/geometry.hpp"

using namespace bilin;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec v3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

SurfaceSpec parab(const Vec& c, double r, double margin = 0.05) {
  return make_surface("elliptic-paraboloid", json::object(),
                      Domain::make_ball(c, r), margin);
}

SurfaceSpec hyper(const Vec& c, double r, double margin = 0.05) {
  return make_surface("hyperbolic-paraboloid", json::object(),
                      Domain::make_ball(c, r), margin);
}

Vec from_json_vec(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(v.data(), (Eigen::Index)v.size());
}

ConditionOptions fast_opts() {
  ConditionOptions opt;
  opt.surface_res = 16;
  opt.curve_scan = 48;
  return opt;
}

}  // namespace

TEST_CASE("domains: membership, signed distance, inflation, json round trip") {
  const Domain ball = Domain::make_ball(v2(1, 0), 0.5);
  CHECK(ball.contains(v2(1.2, 0.1)));
  CHECK(!ball.contains(v2(1.6, 0)));
  CHECK(ball.dist_to_complement(v2(1, 0)) == doctest::Approx(0.5));
  CHECK(ball.dist_to_complement(v2(2, 0)) == doctest::Approx(-0.5));
  CHECK(ball.inflate(0.25).contains(v2(1.7, 0)));

  const Domain box = Domain::make_box(v2(0, 1), v2(0.5, 0.25));
  CHECK(box.contains(v2(0.4, 1.2)));
  CHECK(!box.contains(v2(0.4, 1.3)));
  Vec lo, hi;
  box.bounds(lo, hi);
  CHECK(lo(0) == doctest::Approx(-0.5));
  CHECK(hi(1) == doctest::Approx(1.25));

  for (const Domain& d : {ball, box}) {
    const Domain back = Domain::from_json(d.to_json(), 2);
    CHECK(back.kind == d.kind);
    CHECK((back.center - d.center).norm() < 1e-15);
  }
  CHECK_THROWS_AS(Domain::make_ball(v2(0, 0), -1.0), Error);
  CHECK_THROWS_AS(Domain::from_json(json{{"kind", "disk"}, {"center", {0, 0}}}, 2),
                  Error);
}

TEST_CASE("catalog surfaces produce the frozen unit normals") {
  const SurfaceSpec P = parab(v2(1, 0), 0.3);
  const SurfacePoint p = surface_point(P, v2(1, 0));
  const double s5 = 1.0 / std::sqrt(5.0);
  CHECK((p.normal - v3(-2 * s5, 0, s5)).norm() < 1e-14);
  CHECK(p.pos(2) == doctest::Approx(1.0));

  const SurfaceSpec C = make_surface("cone", json::object(),
                                     Domain::make_ball(v2(1, 0), 0.3), 0.05);
  const SurfacePoint q = surface_point(C, v2(1, 0));
  const double s2 = 1.0 / std::sqrt(2.0);
  CHECK((q.normal - v3(-s2, 0, s2)).norm() < 1e-14);

  // Tangent frames are orthonormal and orthogonal to the normal.
  for (const SurfacePoint& sp : {p, q}) {
    CHECK((sp.tangent.transpose() * sp.tangent - Mat::Identity(2, 2)).norm() <
          1e-12);
    CHECK((sp.tangent.transpose() * sp.normal).norm() < 1e-12);
    CHECK(sp.normal.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("catalog validation: unknown names and singular-set domains trip") {
  CHECK_THROWS_AS(make_surface("saddle", json::object(),
                               Domain::make_ball(v2(0, 0), 1), 0.1),
                  Error);
  try {
    make_surface("saddle", json::object(), Domain::make_ball(v2(0, 0), 1), 0.1);
  } catch (const Error& e) {
    CHECK(e.exit_code() == 2);
  }
  // Cone domain whose enlargement swallows the apex.
  CHECK_THROWS_AS(make_surface("cone", json::object(),
                               Domain::make_ball(v2(0.2, 0), 0.15), 0.1),
                  Error);
  // Generalized cone must keep rho away from 0.
  CHECK_THROWS_AS(
      make_surface("generalized-cone", json{{"H", {{1.0}}}},
                   Domain::make_box(v2(0, 0.05), v2(0.5, 0.2)), 0.01),
      Error);
  CHECK_THROWS_AS(
      make_surface("generalized-cone", json{{"H", {{0.0}}}},
                   Domain::make_box(v2(0, 1), v2(0.5, 0.2)), 0.01),
      Error);
  CHECK_THROWS_AS(make_surface("quadratic", json{{"coefficients", {1.0}}},
                               Domain::make_ball(v2(0, 0), 1), 0.1),
                  Error);
  CHECK(catalog_names().size() == 7);
  CHECK(catalog_help().size() == catalog_names().size());
}

TEST_CASE("quadratic and mixed-degree derivatives match direct algebra") {
  const SurfaceSpec Q =
      make_surface("quadratic", json{{"coefficients", {1.0, -1.0}}},
                   Domain::make_ball(v2(1, 1), 0.3), 0.05);
  const SurfaceSpec Hp = hyper(v2(1, 1), 0.3);
  for (const Vec& xi : {v2(0.9, 1.1), v2(1.2, 0.8)}) {
    CHECK(Q.phi(xi) == doctest::Approx(Hp.phi(xi)).epsilon(1e-14));
    CHECK((Q.grad(xi) - Hp.grad(xi)).norm() < 1e-14);
    CHECK((Q.hess(xi) - Hp.hess(xi)).norm() < 1e-14);
  }

  const SurfaceSpec M = make_surface("mixed-degree", json{{"k", 4}},
                                     Domain::make_ball(v2(1, 0.5), 0.4), 0.05);
  const Vec xi = v2(1.2, 0.7);
  CHECK(M.phi(xi) == doctest::Approx(std::pow(1.2, 4) + 0.49).epsilon(1e-14));
  CHECK(M.grad(xi)(0) == doctest::Approx(4 * std::pow(1.2, 3)).epsilon(1e-14));
  CHECK(M.grad(xi)(1) == doctest::Approx(1.4).epsilon(1e-14));
  CHECK(M.hess(xi)(0, 0) == doctest::Approx(12 * 1.44).epsilon(1e-14));
  CHECK(M.hess(xi)(1, 1) == doctest::Approx(2.0).epsilon(1e-14));

  const SurfaceSpec G = make_surface(
      "generalized-cone", json{{"H", {{2.0}}}},
      Domain::make_box(v2(0.1, 1.5), v2(0.3, 0.3)), 0.05);
  const Vec gc = v2(0.2, 1.4);
  CHECK(G.phi(gc) == doctest::Approx(2.0 * 0.04 / 1.4).epsilon(1e-14));
  // Degree-1 homogeneity: phi(t xi) = t phi(xi).
  CHECK(G.phi(1.1 * gc) == doctest::Approx(1.1 * G.phi(gc)).epsilon(1e-12));
}

TEST_CASE("tabulated graph surface interpolates and differentiates smoothly") {
  const int nk = 41;
  std::vector<double> vals(nk * nk);
  const double lo = -1.5, hi = 1.5, h = (hi - lo) / (nk - 1);
  for (int i = 0; i < nk; ++i)
    for (int j = 0; j < nk; ++j) {
      const double x = lo + i * h, y = lo + j * h;
      vals[i * nk + j] = std::sin(x) * std::cos(y);
    }
  json params = {{"lo", {lo, lo}}, {"hi", {hi, hi}}, {"dims", {nk, nk}},
                 {"values", vals}};
  const SurfaceSpec G = make_surface("graph", params,
                                     Domain::make_ball(v2(0, 0), 0.5), 0.05);
  CHECK(!G.field->exact_derivatives());
  for (const Vec& xi : {v2(0.31, -0.17), v2(-0.42, 0.29), v2(0.05, 0.44)}) {
    CHECK(std::abs(G.phi(xi) - std::sin(xi(0)) * std::cos(xi(1))) < 1e-5);
    const Vec g = G.grad(xi);
    CHECK(std::abs(g(0) - std::cos(xi(0)) * std::cos(xi(1))) < 1e-3);
    CHECK(std::abs(g(1) + std::sin(xi(0)) * std::sin(xi(1))) < 1e-3);
  }
  // Cubic interpolation reproduces a quadratic in the deep interior.
  for (int i = 0; i < nk; ++i)
    for (int j = 0; j < nk; ++j) {
      const double x = lo + i * h, y = lo + j * h;
      vals[i * nk + j] = x * x + y * y;
    }
  params["values"] = vals;
  const SurfaceSpec G2 = make_surface("graph", params,
                                      Domain::make_ball(v2(0, 0), 0.5), 0.05);
  CHECK(std::abs(G2.phi(v2(0.23, -0.11)) - (0.23 * 0.23 + 0.11 * 0.11)) < 1e-5);

  // Domain reaching the table edge is rejected.
  CHECK_THROWS_AS(make_surface("graph", params,
                               Domain::make_ball(v2(0, 0), 1.45), 0.05),
                  Error);
}

TEST_CASE("shape operator: paraboloid eigenvalues on and off center") {
  const SurfaceSpec P = parab(v2(0, 0), 0.5);
  const ShapeOperator s0 = shape_operator(P, v2(0, 0));
  CHECK((s0.matrix - 2.0 * Mat::Identity(2, 2)).norm() < 1e-9);
  CHECK(s0.eigenvalues(0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(s0.eigenvalues(1) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(s0.fd_consistency < 1e-5);

  // Rotationally symmetric oracle: curvatures 2/w and 2/w^3, w = sqrt(1+4r^2).
  const Vec xi = v2(0.3, -0.2);
  const double w = std::sqrt(1.0 + 4.0 * xi.squaredNorm());
  const ShapeOperator s1 = shape_operator(P, xi);
  CHECK(s1.eigenvalues(0) == doctest::Approx(2.0 / w).epsilon(1e-9));
  CHECK(s1.eigenvalues(1) == doctest::Approx(2.0 / (w * w * w)).epsilon(1e-9));

  const SurfaceSpec Hp = hyper(v2(0, 0), 0.5);
  const ShapeOperator sh = shape_operator(Hp, v2(0, 0));
  CHECK(sh.eigenvalues(0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(sh.eigenvalues(1) == doctest::Approx(-2.0).epsilon(1e-10));
}

TEST_CASE("shape operator: the cone has an exactly flat principal direction") {
  const SurfaceSpec C = make_surface("cone", json::object(),
                                     Domain::make_ball(v2(1.1, 0), 0.4), 0.05);
  for (const Vec& xi : {v2(1, 0), v2(0.9, 0.3), v2(1.2, -0.25)}) {
    const ShapeOperator s = shape_operator(C, xi);
    const double r = xi.norm();
    CHECK(std::abs(s.eigenvalues(1)) <= 1e-6);
    CHECK(s.eigenvalues(0) ==
          doctest::Approx(1.0 / (r * std::sqrt(2.0))).epsilon(1e-8));
    // Flat direction is the lifted ray (xi, |xi|)/(r sqrt(2)).
    Vec ray = v3(xi(0), xi(1), r);
    ray /= ray.norm();
    CHECK(std::abs(s.directions.col(1).dot(ray)) == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Shape operator through the spline path stays close to the exact one.
  const int nk = 41;
  std::vector<double> vals(nk * nk);
  const double lo = -1.5, hi = 1.5, h = (hi - lo) / (nk - 1);
  for (int i = 0; i < nk; ++i)
    for (int j = 0; j < nk; ++j) {
      const double x = lo + i * h, y = lo + j * h;
      vals[i * nk + j] = x * x + y * y;
    }
  const SurfaceSpec G = make_surface(
      "graph",
      json{{"lo", {lo, lo}}, {"hi", {hi, hi}}, {"dims", {nk, nk}}, {"values", vals}},
      Domain::make_ball(v2(0, 0), 0.4), 0.05);
  const SurfaceSpec P = parab(v2(0, 0), 0.4);
  const Vec xi = v2(0.07, -0.04);
  const Mat diff = shape_operator(G, xi).matrix - shape_operator(P, xi).matrix;
  CHECK(diff.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("intersection curve of a paraboloid pair is the unit circle") {
  const SurfaceSpec S1 = parab(v2(1, 0), 0.9);
  const SurfaceSpec S2 = parab(v2(-1, 0), 0.9);
  const Vec h = v3(0, 0, 2);
  const IntersectionCurve cur = solve_intersection_curve(S1, S2, h);
  REQUIRE(!cur.empty);
  CHECK(cur.samples.size() >= 20);
  for (const CurveSample& s : cur.samples) {
    CHECK(std::abs(s.xi.norm() - 1.0) < 1e-9);
    // Residual contract.
    CHECK(std::abs(S1.phi(s.xi) + S2.phi(Vec(h.head(2) - s.xi)) - h(2)) <=
          1e-10 * 3.0);
    // Projected tangent is orthogonal to grad F = grad phi1 + grad phi2 dual.
    const Vec gF = S1.grad(s.xi) - S2.grad(Vec(h.head(2) - s.xi));
    CHECK(std::abs(s.tangent_proj.dot(gF)) < 1e-6 * gF.norm());
    CHECK(s.tangent_proj.dot(s.conormal_proj) == doctest::Approx(0.0).epsilon(1e-12));
    // Lifted frames: unit, mutually orthogonal, tangent to S1.
    CHECK(s.tangent_emb.norm() == doctest::Approx(1.0));
    CHECK(s.conormal_emb.norm() == doctest::Approx(1.0));
    CHECK(std::abs(s.tangent_emb.dot(s.conormal_emb)) < 1e-12);
    const Vec N1 = surface_point(S1, s.xi).normal;
    CHECK(std::abs(s.tangent_emb.dot(N1)) < 1e-9);
    CHECK(std::abs(s.conormal_emb.dot(N1)) < 1e-9);
    CHECK((s.pos - S1.lift(s.xi)).norm() < 1e-14);
  }

  // Unreachable level: empty, flagged, no throw.
  const IntersectionCurve far = solve_intersection_curve(S1, S2, v3(0, 0, 9));
  CHECK(far.empty);
  // Disjoint translate overlap: empty.
  const IntersectionCurve off = solve_intersection_curve(S1, S2, v3(9, 0, 2));
  CHECK(off.empty);
}

TEST_CASE("default translation set starts at the center sum and is reproducible") {
  const SurfaceSpec S1 = parab(v2(1, 0), 0.4);
  const SurfaceSpec S2 = parab(v2(-1, 0), 0.4);
  const auto hs = default_h_samples(S1, S2, 7, 42);
  REQUIRE(hs.size() == 7);
  CHECK((hs[0] - v3(0, 0, 2)).norm() < 1e-14);
  for (const Vec& h : hs) {
    const IntersectionCurve c = solve_intersection_curve(S1, S2, h);
    CHECK(!c.empty);
  }
  const auto hs2 = default_h_samples(S1, S2, 7, 42);
  for (std::size_t i = 0; i < hs.size(); ++i) CHECK((hs[i] - hs2[i]).norm() == 0.0);
  const auto hs3 = default_h_samples(S1, S2, 7, 43);
  CHECK((hs[1] - hs3[1]).norm() > 0.0);
}

TEST_CASE("C1: separated paraboloid pieces give the 4/5 infimum") {
  const SurfaceSpec S1 = parab(v2(1, 0), 0.02);
  const SurfaceSpec S2 = parab(v2(-1, 0), 0.02);
  ConditionOptions opt = fast_opts();
  opt.theta = 0.5;
  const ConditionReport rep = check_C1(S1, S2, opt);
  CHECK(rep.infimum == doctest::Approx(0.8).epsilon(0.03));
  CHECK(rep.pass);
  CHECK(rep.samples > 0);
  // Witness re-evaluation reproduces the infimum.
  const double re = c1_value(S1, S2, from_json_vec(rep.witness.at("xi1")),
                             from_json_vec(rep.witness.at("xi2")));
  CHECK(std::abs(re - rep.infimum) <= 1e-10);
  // Serialization carries the contract fields.
  const json j = rep.to_json();
  for (const char* key : {"condition", "infimum", "threshold", "verdict",
                          "witness", "samples"})
    CHECK(j.contains(key));
  CHECK(j["verdict"] == "pass");

  // Identical overlapping pieces: infimum collapses to zero.
  const ConditionReport same = check_C1(S1, S1, fast_opts());
  CHECK(same.infimum <= 1e-12);
  CHECK(!same.pass);

  // Paraboloid against a cone with overlapping directions: normals collide
  // where |grad phi| = 1.
  const SurfaceSpec Pp = parab(v2(0.5, 0), 0.1);
  const SurfaceSpec Cc = make_surface("cone", json::object(),
                                      Domain::make_ball(v2(1, 0), 0.2), 0.05);
  const ConditionReport mix = check_C1(Pp, Cc, fast_opts());
  CHECK(mix.infimum <= 1e-3);
  CHECK(!mix.pass);

  // Deterministic across execution modes.
  ConditionOptions ser = fast_opts();
  ser.theta = 0.5;
  ser.exec = Exec::serial;
  const ConditionReport srep = check_C1(S1, S2, ser);
  CHECK(srep.infimum == rep.infimum);
  CHECK(srep.witness == rep.witness);
}

TEST_CASE("C2: near-flat elliptic pair passes; the local infimum sits near 2") {
  const SurfaceSpec S1 = parab(v2(0.08, 0), 0.03);
  const SurfaceSpec S2 = parab(v2(-0.08, 0), 0.03);
  ConditionOptions opt = fast_opts();
  const auto hs = default_h_samples(S1, S2, 5, opt.seed);
  const auto [glob, loc] = check_C2(S1, S2, hs, opt);
  CHECK(glob.condition == "C2_global");
  CHECK(loc.condition == "C2_local");
  CHECK(loc.infimum >= 1.9);
  CHECK(loc.infimum <= 2.01);
  CHECK(loc.pass);
  CHECK(glob.pass);
  CHECK(glob.infimum >= 0.1);
  CHECK(!glob.details.at("warn_nvar").get<bool>());
  // Witness re-evaluation for the global variant.
  const json& w = glob.witness;
  const SurfaceSpec& Si = w.at("side").get<int>() == 1 ? S1 : S2;
  const double re =
      c2_global_value(Si, S1, S2, from_json_vec(w.at("xi_a")),
                      from_json_vec(w.at("xi_b")), from_json_vec(w.at("xi_t1")),
                      from_json_vec(w.at("xi_t2")));
  CHECK(std::abs(re - glob.infimum) <= 1e-10);
}

TEST_CASE("C2: the Lee configuration fails the local variant") {
  const SurfaceSpec S1 = hyper(v2(1, 1), 0.1);
  const SurfaceSpec S2 = hyper(v2(-1, -1), 0.1);
  ConditionOptions opt = fast_opts();
  const auto hs = default_h_samples(S1, S2, 5, opt.seed);
  const auto [glob, loc] = check_C2(S1, S2, hs, opt);
  CHECK(loc.infimum <= 1e-6);
  CHECK(!loc.pass);
  (void)glob;

  // All-empty translation set is inconclusive.
  CHECK_THROWS_AS(check_C2(S1, S2, {v3(0, 0, 50)}, opt), Error);
}

TEST_CASE("C2: large normal variation raises the equivalence warning") {
  const SurfaceSpec S1 = parab(v2(0.6, 0), 1.0);
  const SurfaceSpec S2 = parab(v2(-0.6, 0), 1.0);
  ConditionOptions opt = fast_opts();
  opt.surface_res = 12;
  const auto hs = default_h_samples(S1, S2, 3, opt.seed);
  const auto [glob, loc] = check_C2(S1, S2, hs, opt);
  CHECK(glob.details.at("warn_nvar").get<bool>());
  CHECK(glob.details.at("normal_variation").get<double>() > 0.2);
  (void)loc;
}

TEST_CASE("C3: curvature of elliptic curves is near 2, Lee line is flat") {
  const SurfaceSpec S1 = parab(v2(0.08, 0), 0.03);
  const SurfaceSpec S2 = parab(v2(-0.08, 0), 0.03);
  ConditionOptions opt = fast_opts();
  const auto hs = default_h_samples(S1, S2, 5, opt.seed);
  const ConditionReport rep = check_C3(S1, S2, hs, opt);
  CHECK(rep.infimum >= 1.9);
  CHECK(rep.infimum <= 2.01);
  CHECK(rep.pass);

  const SurfaceSpec L1 = hyper(v2(1, 1), 0.1);
  const SurfaceSpec L2 = hyper(v2(-1, -1), 0.1);
  const auto lhs = default_h_samples(L1, L2, 5, opt.seed);
  const ConditionReport lee = check_C3(L1, L2, lhs, opt);
  CHECK(lee.infimum <= 1e-6);
  CHECK(!lee.pass);

  // Cone as S1 against a separated paraboloid: curve tangents stay away from
  // the flat ray direction, so the curvature bound holds.
  const SurfaceSpec C1s = make_surface("cone", json::object(),
                                       Domain::make_ball(v2(1, 0), 0.1), 0.05);
  const SurfaceSpec P2 = parab(v2(-1, 0), 0.1);
  const auto chs = default_h_samples(C1s, P2, 5, opt.seed);
  const ConditionReport cone_rep = check_C3(C1s, P2, chs, opt);
  CHECK(cone_rep.infimum >= 0.1);
  CHECK(cone_rep.pass);
}

TEST_CASE("C3bb is exactly 2 for paraboloids and collapses for Lee") {
  const SurfaceSpec S1 = parab(v2(0.6, 0), 0.2);
  const SurfaceSpec S2 = parab(v2(-0.6, 0), 0.2);
  ConditionOptions opt = fast_opts();
  const auto hs = default_h_samples(S1, S2, 5, opt.seed);
  const ConditionReport rep = check_C3bb(S1, S2, hs, opt);
  CHECK(rep.infimum == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(rep.pass);

  const SurfaceSpec L1 = hyper(v2(1, 1), 0.1);
  const SurfaceSpec L2 = hyper(v2(-1, -1), 0.1);
  const auto lhs = default_h_samples(L1, L2, 5, opt.seed);
  const ConditionReport lee = check_C3bb(L1, L2, lhs, opt);
  CHECK(lee.infimum <= 1e-6);
  CHECK(!lee.pass);
}

TEST_CASE("CLee: 1/2 for paraboloids, 0 for the Lee pair, cone not applicable") {
  const SurfaceSpec S1 = parab(v2(0.6, 0), 0.2);
  const SurfaceSpec S2 = parab(v2(-0.6, 0), 0.2);
  ConditionOptions opt = fast_opts();
  const auto hs = default_h_samples(S1, S2, 5, opt.seed);
  const ConditionReport rep = check_CLee(S1, S2, hs, opt);
  CHECK(rep.infimum == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(rep.pass);
  CHECK(!rep.details.at("not_applicable").get<bool>());

  const SurfaceSpec L1 = hyper(v2(1, 1), 0.1);
  const SurfaceSpec L2 = hyper(v2(-1, -1), 0.1);
  const auto lhs = default_h_samples(L1, L2, 5, opt.seed);
  const ConditionReport lee = check_CLee(L1, L2, lhs, opt);
  CHECK(lee.infimum <= 1e-6);
  CHECK(!lee.pass);

  // The cone's graph Hessian is singular along its flat direction.
  const SurfaceSpec C1s = make_surface("cone", json::object(),
                                       Domain::make_ball(v2(1, 0), 0.1), 0.05);
  const SurfaceSpec P2 = parab(v2(-1, 0), 0.1);
  const auto chs = default_h_samples(C1s, P2, 3, opt.seed);
  const ConditionReport na = check_CLee(C1s, P2, chs, opt);
  CHECK(na.details.at("not_applicable").get<bool>());
  CHECK(na.details.at("singular_samples").get<long long>() > 0);
  CHECK(!na.pass);

  // Bundled evaluation returns the same pair of reports.
  const auto [bb, cl] = check_C3bb_and_CLee(S1, S2, hs, opt);
  CHECK(bb.condition == "C3bb");
  CHECK(cl.infimum == rep.infimum);
}

TEST_CASE("LFW: separated paraboloids pass, the Lee pair is tangent") {
  const SurfaceSpec S1 = parab(v2(1, 0), 0.05);
  const SurfaceSpec S2 = parab(v2(-1, 0), 0.05);
  ConditionOptions opt = fast_opts();
  const auto hs = default_h_samples(S1, S2, 3, opt.seed);
  const ConditionReport rep = check_LFW(S1, S2, hs, opt);
  CHECK(rep.infimum >= 0.5);  // analytic value at the centers is 4/5
  CHECK(rep.pass);

  const SurfaceSpec L1 = hyper(v2(1, 1), 0.1);
  const SurfaceSpec L2 = hyper(v2(-1, -1), 0.1);
  const auto lhs = default_h_samples(L1, L2, 3, opt.seed);
  const ConditionReport lee = check_LFW(L1, L2, lhs, opt);
  CHECK(lee.infimum <= 1e-6);
  CHECK(!lee.pass);
}

TEST_CASE("LFW: a flat second surface whose normal grazes the cone fails") {
  // S1 curve = tiny circle around the origin, so the normal cone hugs the
  // vertical axis; S2 is a flat piece with exactly vertical normals.
  const SurfaceSpec S1 = parab(v2(0, 0), 0.4);
  const SurfaceSpec S2 =
      make_surface("quadratic", json{{"coefficients", {0.0, 0.0}}},
                   Domain::make_ball(v2(3, 0), 0.5), 0.05);
  ConditionOptions opt = fast_opts();
  const Vec h = v3(3, 0, 1e-4);
  const ConditionReport rep = check_LFW(S1, S2, {h}, opt);
  CHECK(rep.infimum <= 0.05);
  CHECK(!rep.pass);

  // Degenerate sheet: flat S1 makes S v vanish identically.
  const SurfaceSpec F1 =
      make_surface("quadratic", json{{"coefficients", {0.0, 0.0}}},
                   Domain::make_ball(v2(0, 0), 0.5), 0.05);
  const ConditionReport deg = check_LFW(F1, S1, {v3(0, 0, 0.04)}, opt);
  CHECK(deg.infimum == 0.0);
  CHECK(deg.witness.contains("degenerate_sheet"));
}

TEST_CASE("normal cone sampling covers rays with consistent face normals") {
  const SurfaceSpec S1 = parab(v2(1, 0), 0.4);
  const SurfaceSpec S2 = parab(v2(-1, 0), 0.4);
  const Vec h = v3(0, 0, 2);
  const IntersectionCurve cur = solve_intersection_curve(S1, S2, h);
  REQUIRE(!cur.empty);
  const std::vector<double> alphas = {-2.0, -1.0, 1.0, 0.5, 2.0};
  const ConeCloud cloud = normal_cone_samples(S1, cur, alphas);
  CHECK(cloud.points.size() == cur.samples.size() * alphas.size());
  CHECK(cloud.patch_radius > 0.0);
  for (const ConePoint& p : cloud.points) {
    CHECK(p.unit_ray.norm() == doctest::Approx(1.0));
    CHECK((p.pos - p.alpha * p.unit_ray).norm() < 1e-14);
    if (p.face_normal.norm() > 0) {
      CHECK(std::abs(p.face_normal.dot(p.unit_ray)) < 1e-10);
      CHECK(p.face_normal.norm() == doctest::Approx(1.0));
    }
  }
  const ConeCloud via_h = normal_cone_samples(S1, S2, h, alphas);
  CHECK(via_h.points.size() == cloud.points.size());
  CHECK_THROWS_AS(normal_cone_samples(S1, cur, {0.0}), Error);
}
