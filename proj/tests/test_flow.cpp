#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "critscat/manifolds.hpp"
#include "oracles.hpp"

#include <random>

using namespace critscat;

namespace {
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
}  // namespace

TEST_CASE("vector field") {
  const Vec f = vector_field(make_free(2), {v2(1, 0), v2(2, 0)});
  CHECK((f - (Vec(4) << 2, 0, 0, 0).finished()).norm() == 0.0);

  const auto m = make_gaussian(1.0, {1.0, 2.0});
  CHECK(vector_field(m, {v2(0, 0), v2(0, 0)}).norm() == 0.0);

  const Vec g = vector_field(m, {v2(1, 0), v2(0, 0)});
  const double e = 1e-6;
  const double fd = (m.value(v2(1 + e, 0)) - m.value(v2(1 - e, 0))) / (2 * e);
  CHECK(g.head(2).norm() == 0.0);
  CHECK(std::abs(g[2] + fd) < 1e-6);
  CHECK(std::abs(g[3]) < 1e-15);
}

TEST_CASE("free flight and identity") {
  const auto p = flow(make_free(2), {v2(0, 0), v2(1, 0)}, 2.0);
  CHECK((p.x - v2(2, 0)).norm() < 1e-12);
  CHECK((p.xi - v2(1, 0)).norm() == 0.0);

  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const PhasePoint q{v2(0.3, -0.2), v2(0.4, 0.9)};
  const auto r = flow(m, q, 0.0);
  CHECK((r.packed() - q.packed()).norm() == 0.0);
}

TEST_CASE("variational flow: closed forms") {
  SUBCASE("free") {
    const auto vf = flow_with_variational(make_free(2), {v2(0, 0), v2(1, 0)}, 3.0);
    Mat want = Mat::Identity(4, 4);
    want.topRightCorner(2, 2) = 3.0 * Mat::Identity(2, 2);
    CHECK((vf.M - want).norm() < 1e-12);
  }
  SUBCASE("fixed point of the quadratic barrier") {
    const auto vf = flow_with_variational(make_quadratic(1.0, {1.0, 2.0}), {v2(0, 0), v2(0, 0)}, 1.0);
    const Mat want = oracle::quadratic_propagator({1.0, 2.0}, 1.0);
    CHECK((vf.M - want).norm() / want.norm() < 1e-9);
    CHECK(symplectic_defect(vf.M) < 1e-12);
  }
}

TEST_CASE("variational matrix against finite differences of the flow") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const PhasePoint p{v2(-1.5, 0.4), v2(1.1, -0.2)};
  const double t = 2.5;
  const auto vf = flow_with_variational(m, p, t);
  const Vec base = p.packed();
  const double e = 1e-6;
  FlowOptions tight;
  tight.abs_tol = tight.rel_tol = 1e-13;
  for (int j = 0; j < 4; ++j) {
    Vec a = base, b = base;
    a[j] += e;
    b[j] -= e;
    const Vec col = (flow(m, PhasePoint::unpack(a), t, tight).packed() - flow(m, PhasePoint::unpack(b), t, tight).packed()) /
                    (2 * e);
    CHECK((col - vf.M.col(j)).norm() <= 1e-4 * vf.M.col(j).norm());
  }
}

TEST_CASE("flow near the stable manifold approaches the fixed point") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const auto s = manifold_point(m, ManifoldSide::minus, v2(0.6, 0.8), 3.0);
  const PhasePoint p = s.rho;
  FlowOptions ref;
  ref.abs_tol = ref.rel_tol = 1e-11;
  const double n0 = p.norm();
  for (double t : {2.0, 4.0, 6.0, 8.0}) {
    const auto a = flow(m, p, t);
    const auto b = flow(m, p, t, ref);
    CHECK((a.packed() - b.packed()).norm() < 1e-7);
    CHECK(a.norm() <= 3.0 * n0 * std::exp(-1.0 * t));
  }
}

TEST_CASE("energy drift and symplectic defect on random initial data") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  double drift = 0, defect = 0;
  for (int k = 0; k < 40; ++k) {
    const Vec x = v2(2 * u(rng), 2 * u(rng));
    const double E = 1.0 + 0.2 * u(rng);
    const double K = E - m.value(x);
    if (K <= 0) continue;
    const double a = std::numbers::pi * u(rng);
    const Vec xi = std::sqrt(2 * K) * v2(std::cos(a), std::sin(a));
    const auto r = FlowIntegrator(m).integrate(AugmentedState({x, xi}, Mat::Identity(4, 4)), 0, k % 2 ? 20 : -20);
    drift = std::max(drift, r.max_energy_drift);
    defect = std::max(defect, symplectic_defect(r.state.tangents));
  }
  CHECK(drift <= 1e-9);
  CHECK(defect <= 1e-7);
}

TEST_CASE("escape time") {
  SUBCASE("free flight") {
    const PhasePoint p{v2(1, 0.5), v2(2, 0)};
    const auto o = escape_time(make_free(2), p, 10.0, 100.0);
    CHECK(o.kind == EscapeKind::escaped);
    // |x(t)| = R with x = (1 + 2t, 0.5)
    const double want = (std::sqrt(100.0 - 0.25) - 1.0) / 2.0;
    CHECK(o.t == doctest::Approx(want).epsilon(1e-6));
  }
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  SUBCASE("point on the stable manifold converges") {
    const auto s = manifold_point(m, ManifoldSide::minus, v2(1, 0), 2.0);
    CHECK(escape_time(m, s.rho, 20.0, 200.0).kind == EscapeKind::converged_to_origin);
  }
  SUBCASE("critical-energy point off the stable manifold escapes both ways") {
    const Vec x = v2(-0.5, 0.3);
    const double K = 1.0 - m.value(x);
    const PhasePoint p{x, std::sqrt(2 * K) * v2(0.0, 1.0)};
    CHECK(escape_time(m, p, 20.0, 200.0).kind == EscapeKind::escaped);
    CHECK(escape_time(m, p, 20.0, -200.0).kind == EscapeKind::escaped);
  }
}

TEST_CASE("trajectory recording at requested times") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const std::vector<double> ts{0.0, 0.5, 1.0, 1.5};
  const auto seg = trajectory(m, {v2(-3, 0.2), v2(1.5, 0)}, 1.5, {}, true, ts);
  REQUIRE(seg.samples.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(seg.samples[i].t == doctest::Approx(ts[i]));
    CHECK(seg.samples[i].M.rows() == 4);
  }
}
