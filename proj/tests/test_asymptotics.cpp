#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "critscat/manifolds.hpp"
#include "oracles.hpp"

using namespace critscat;

namespace {
// Head-on capture needs |E - E0| well below the closest-approach threshold
// squared, hence tolerances 100x tighter than the defaults.
ScatterOptions tight() {
  ScatterOptions o;
  o.flow = o.flow.scaled(1e-2);
  o.flow.energy_drift_tol *= 1e-2;
  return o;
}
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
double angle_of(const Vec& v) { return std::atan2(v[1], v[0]); }
}  // namespace

TEST_CASE("free asymptote is exact") {
  const auto p = init_from_asymptote(make_free(2), {v2(1, 0), v2(0, 1), 0.5, Side::incoming});
  CHECK((p.x - v2(0, 1)).norm() < 1e-12);
  CHECK((p.xi - v2(1, 0)).norm() < 1e-12);
}

TEST_CASE("large impact parameter: correction is small and stable under doubling R0") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const ImpactCoordinates ic{v2(1, 0), v2(0, 10), 1.0, Side::incoming};
  ScatterOptions a, b;
  b.R0_scale = 2 * a.R0_scale;
  const auto pa = init_from_asymptote(m, ic, a);
  const auto pb = init_from_asymptote(m, ic, b);
  CHECK((pa.x - v2(0, 10)).norm() <= 1e-3);
  CHECK((pa.xi - v2(std::sqrt(2.0), 0)).norm() <= 1e-3);
  CHECK((pa.packed() - pb.packed()).norm() <= 1e-8);
}

TEST_CASE("head-on at the critical energy lies on the stable manifold") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const auto o = tight();
  const auto p = init_from_asymptote(m, {v2(1, 0), v2(0, 0), 1.0, Side::incoming}, o);
  CHECK(escape_time(m, p, 20.0, 200.0, o.flow).kind == EscapeKind::converged_to_origin);
}

TEST_CASE("extract_asymptotics of a free trajectory") {
  const auto seg = trajectory(make_free(2), {v2(0, 1), v2(1, 0)}, 60.0);
  const auto a = extract_asymptotics(seg);
  CHECK((a.xi_inf - v2(1, 0)).norm() < 1e-10);
  CHECK((a.x_inf - v2(0, 1)).norm() < 1e-8);
  CHECK((a.Theta - v2(1, 0)).norm() < 1e-10);
  CHECK((a.Z - v2(0, 1)).norm() < 1e-8);
}

TEST_CASE("deflection against the radial quadrature") {
  const auto m = make_gaussian(1.0, {1.0, 1.0});
  for (double b : {0.3, 1.0, 2.0, -0.8}) {
    const auto d = scattering_data(m, v2(1, 0), v2(0, b), 1.5);
    const double got = angle_of(d.theta);
    const double want = oracle::deflection_angle({1.0, 1.0, 0.0}, 1.5, b);
    CHECK(std::abs(std::remainder(got - want, 2 * std::numbers::pi)) <= 1e-4);
    CHECK(std::abs(d.theta.norm() - 1.0) < 1e-12);
    // outgoing impact parameter is orthogonal to theta
    CHECK(std::abs(d.z_plus.dot(d.theta)) < 1e-8);
  }
}

TEST_CASE("scattering data: free and captured") {
  const auto f = scattering_data(make_free(2), v2(0.6, 0.8), v2(-0.8, 0.6) * 0.7, 0.8);
  CHECK((f.theta - v2(0.6, 0.8)).norm() < 1e-10);
  CHECK((f.z_plus - v2(-0.8, 0.6) * 0.7).norm() < 1e-8);

  const auto m = make_gaussian(1.0, {1.0, 2.0});
  CHECK_THROWS_AS(scattering_data(m, v2(1, 0), v2(0, 0), 1.0, tight()), CapturedError);
}

TEST_CASE("asymptotics of an unstable-manifold trajectory are stable under window doubling") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const auto s = manifold_point(m, ManifoldSide::plus, v2(0.6, 0.8), 1.0);
  ScatterOptions a, b;
  b.R_fit = 2 * a.R_fit;
  const auto da = escape_asymptotics(m, s.rho, 0.0, 1.0, a);
  const auto db = escape_asymptotics(m, s.rho, 0.0, 1.0, b);
  CHECK((da.Theta - db.Theta).norm() <= 1e-6);
  CHECK((da.Z - db.Z).norm() <= 1e-6);
}

TEST_CASE("rational barrier: slow decay is still matched by the quadrature") {
  const auto m = make_rational(1.0, {1.0, 1.0}, 1.5);
  const auto d = scattering_data(m, v2(1, 0), v2(0, 1.0), 1.5);
  CHECK(std::abs(angle_of(d.theta) - oracle::deflection_angle({1.0, 1.0, 1.5}, 1.5, 1.0)) <= 1e-4);
}
