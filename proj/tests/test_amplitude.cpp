#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "critscat/amplitude.hpp"
#include "critscat/quantum.hpp"
#include "oracles.hpp"

#include <boost/math/tools/minima.hpp>

#include <numbers>

using namespace critscat;

namespace {
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
Vec unit(double phi) { return v2(std::cos(phi), std::sin(phi)); }
Mat rot(double a) {
  Mat R(2, 2);
  R << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return R;
}
const PotentialModel& radial() {
  static const auto m = make_gaussian(1.0, {1.0, 1.0});
  return m;
}
constexpr double kE = 1.5;
const oracle::RadialProfile kProfile{1.0, 1.0, 0.0};  // same barrier in closed form

// Signed impact parameters b with chi(b) = target, from a dense scan of the
// quadrature deflection function refined by bisection.
std::vector<double> deflection_roots(double target, double R) {
  std::vector<double> roots;
  const int N = 800;
  auto f = [&](double b) { return std::remainder(oracle::deflection_angle(kProfile, kE, b) - target, 2 * std::numbers::pi); };
  double b0 = -R, f0 = f(b0);
  for (int i = 1; i <= N; ++i) {
    const double b1 = -R + 2 * R * i / N, f1 = f(b1);
    if (f0 * f1 < 0 && std::abs(f0 - f1) < 1.0) {
      const auto [a, c] = boost::math::tools::bisect(f, b0, b1, [](double l, double u) { return u - l < 1e-13; });
      roots.push_back(0.5 * (a + c));
    }
    b0 = b1;
    f0 = f1;
  }
  return roots;
}
}  // namespace

TEST_CASE("free model: trivial amplitude data") {
  const auto f = make_free(2);
  const Vec w = v2(1, 0);
  CHECK(find_branches(f, w, unit(0.4), 0.5).branches.empty());
  const auto s = sigma_hat(f, w, v2(0, 0.7), 0.5);
  CHECK(s.variational == 0.0);
  CHECK(std::abs(modified_action(f, w, v2(0, 0.7), 0.5)) < 1e-10);
  CHECK(maslov_index(f, w, v2(0, 0.7), 0.5) == 0);
  const auto A = semiclassical_leading_amplitude(f, w, unit(0.4), 0.5, 0.05);
  CHECK(A.value == cplx(0.0, 0.0));
  CHECK(A.branches.empty());
}

TEST_CASE("branches match the dense deflection scan") {
  const Vec w = v2(1, 0);
  for (double th : {0.3, -0.6, 1.2}) {
    const auto bs = find_branches(radial(), w, unit(th), kE);
    const double R = 4.0 * radial().length_scale();
    const auto want = deflection_roots(th, R);
    REQUIRE(bs.branches.size() == want.size());
    std::vector<double> got;
    for (const auto& b : bs.branches) got.push_back(b.z[1]);
    std::sort(got.begin(), got.end());
    for (std::size_t j = 0; j < want.size(); ++j) CHECK(std::abs(got[j] - want[j]) < 1e-6);
  }
}

TEST_CASE("backscattering finds the head-on branch") {
  // below the barrier top the head-on trajectory is reflected straight back
  const auto bs = find_branches(radial(), v2(1, 0), v2(-1, 0), 0.8);
  bool found = false;
  for (const auto& b : bs.branches) found = found || b.z.norm() < 1e-6;
  CHECK(found);
}

TEST_CASE("sigma_hat is 2E |chi'(b)| and rotation invariant") {
  const Vec w = v2(1, 0);
  for (double b : {0.4, 1.1, 1.9}) {
    const double e = 1e-5;
    const double dchi = (oracle::deflection_angle(kProfile, kE, b + e) - oracle::deflection_angle(kProfile, kE, b - e)) / (2 * e);
    const auto s = sigma_hat(radial(), w, v2(0, b), kE);
    CHECK(s.variational == doctest::Approx(2 * kE * std::abs(dchi)).epsilon(1e-5));
    CHECK(s.relative_gap <= 1e-3);
    double lo = s.variational, hi = s.variational;
    for (double a : {0.7, 2.0, 4.1}) {
      const double v = sigma_hat(radial(), rot(a) * w, rot(a) * v2(0, b), kE).variational;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK((hi - lo) <= 1e-3 * hi);
  }
}

TEST_CASE("sigma_hat vanishes at the fold of the deflection function") {
  // the rainbow: extremum of chi(b) for b > 0
  const auto [bf, chif] = boost::math::tools::brent_find_minima(
      [](double b) { return -oracle::deflection_angle(kProfile, kE, b); }, 0.5, 2.5, 40);
  (void)chif;
  const double at_fold = sigma_hat(radial(), v2(1, 0), v2(0, bf), kE).variational;
  const double away = sigma_hat(radial(), v2(1, 0), v2(0, 0.3), kE).variational;
  CHECK(at_fold <= 1e-3 * away);
}

TEST_CASE("modified action: both integrands agree and the value is rotation invariant") {
  const Vec w = v2(1, 0);
  for (double b : {0.2, 1.3}) {
    const auto t = compute_transit(radial(), w, v2(0, b), kE);
    CHECK(std::abs(t.action - t.action_direct) <= 1e-8);
    for (double a : {1.0, 2.5}) {
      const double S = modified_action(radial(), rot(a) * w, rot(a) * v2(0, b), kE);
      CHECK(std::abs(S - t.action) <= 1e-8);
    }
  }
}

// Sign changes of det[xi(t), dx/dz(t)] along gamma_-(t, omega, z, E), sampled
// on a fine uniform grid far into the outgoing free tail.
int brute_force_caustics(const PotentialModel& m, const Vec& w, const Vec& z, double E, double T) {
  const PhasePoint p0 = init_from_asymptote(m, {w, z, E, Side::incoming});
  Mat T0 = Mat::Zero(4, 1);
  T0.col(0).head(2) = v2(-w[1], w[0]);  // incoming momentum does not depend on z
  std::vector<double> ts;
  const int N = 100000;
  for (int i = 0; i <= N; ++i) ts.push_back(T * i / N);
  int changes = 0;
  double prev = 0.0;
  FlowIntegrator(m).integrate(AugmentedState(p0, T0), 0.0, T,
                              [&](double, const AugmentedState& s) {
                                const Vec dx = s.tangents.col(0).head(2);
                                const double d = s.point.xi[0] * dx[1] - s.point.xi[1] * dx[0];
                                if (prev != 0.0 && d * prev < 0) ++changes;
                                if (d != 0.0) prev = d;
                                return true;
                              },
                              ts);
  return changes;
}

TEST_CASE("maslov index") {
  const Vec w = v2(1, 0);
  SUBCASE("repulsive barrier: over-the-top small-angle branch has no caustic, the far branch one") {
    const auto roots = deflection_roots(0.3, 4.0);
    REQUIRE(roots.size() == 2);
    const Vec inner = v2(0, roots[0]), outer = v2(0, roots[1]);
    CHECK(brute_force_caustics(radial(), w, inner, kE, 400.0) == 0);
    CHECK(maslov_index(radial(), w, inner, kE) == 0);
    const int far = brute_force_caustics(radial(), w, outer, kE, 400.0);
    CHECK(far == 1);
    CHECK(maslov_index(radial(), w, outer, kE) == far);
  }
  SUBCASE("focusing well: one focal point") {
    const auto well = make_gaussian_well(2, 0.5, 1.0);
    const int count = brute_force_caustics(well, w, v2(0, 0.5), 0.5, 400.0);
    CHECK(count == 1);
    CHECK(maslov_index(well, w, v2(0, 0.5), 0.5) == count);
  }
}

TEST_CASE("critical order exponents") {
  auto a = critical_order_exponents(std::vector<double>{1.0, 1.0});
  CHECK(a.resolvent_order == doctest::Approx(0.0));
  CHECK(a.scattering_order == doctest::Approx(-0.5));
  auto b = critical_order_exponents(std::vector<double>{1.0, 2.0, 3.0});
  CHECK(b.resolvent_order == doctest::Approx(-2.0));
  CHECK(b.scattering_order == doctest::Approx(-2.5));
  const auto c1 = critical_order_exponents(std::vector<double>{1.0, 1.0 + 1e-9});
  CHECK(std::abs(c1.resolvent_order - a.resolvent_order) < 1e-8);
  CHECK(std::abs(c1.scattering_order - a.scattering_order) < 1e-8);
  const auto ex = critical_order_exponents_exact({Rational(3), Rational(1), Rational(2)});
  CHECK(ex.resolvent_order == Rational(-2));
  CHECK(ex.scattering_order == Rational(-5, 2));
}

TEST_CASE("branch sum against partial waves") {
  // above the barrier every regular theta below the rainbow has two branches
  const double th = 0.3, h = 0.05;
  const auto A = semiclassical_leading_amplitude(radial(), v2(1, 0), unit(th), kE, h);
  REQUIRE(A.branches.size() == 2);
  for (const auto& b : A.branches)
    CHECK(std::abs(assemble({b}, h)) == doctest::Approx(1.0 / std::sqrt(b.sigma_hat)).epsilon(1e-12));
  const auto pw = partial_wave_amplitude(radial(), kE, h, {th});
  const double qs = std::sqrt(2 * kE) * std::abs(A.value);
  CHECK(std::abs(std::abs(pw.f[0]) - qs) <= 0.15 * std::abs(pw.f[0]));
}

TEST_CASE("scattering relation table") {
  SUBCASE("free") {
    std::vector<std::pair<Vec, Vec>> grid{{unit(0.3), v2(0, 0)}, {unit(1.0), unit(1.0 + std::numbers::pi / 2) * 0.8}};
    const auto rows = scattering_relation_table(make_free(2), 0.7, grid);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].status == "ok");
      CHECK((rows[i].theta - rows[i].omega).norm() < 1e-10);
      CHECK((rows[i].eta_plus - rows[i].eta_minus).norm() < 1e-8);
    }
  }
  SUBCASE("radial model: rotation covariance") {
    const double a = 0.9;
    std::vector<std::pair<Vec, Vec>> g1{{unit(0.0), v2(0, 0.6)}, {unit(0.5), unit(0.5 + std::numbers::pi / 2) * 1.4}};
    std::vector<std::pair<Vec, Vec>> g2;
    for (const auto& [w, z] : g1) g2.push_back({rot(a) * w, rot(a) * z});
    const auto r1 = scattering_relation_table(radial(), kE, g1);
    const auto r2 = scattering_relation_table(radial(), kE, g2);
    for (std::size_t i = 0; i < r1.size(); ++i) {
      CHECK((rot(a) * r1[i].theta - r2[i].theta).norm() < 1e-8);
      CHECK((rot(a) * r1[i].eta_plus - r2[i].eta_plus).norm() < 1e-7);
    }
  }
  SUBCASE("capture is flagged at the critical energy") {
    const auto m = make_gaussian(1.0, {1.0, 2.0});
    AmplitudeOptions o;
    o.scatter.flow.energy_drift_tol = 1e-13;
    const auto rows = scattering_relation_table(m, 1.0, {{v2(1, 0), v2(0, 0)}, {v2(1, 0), v2(0, 1.5)}}, o);
    CHECK(rows[0].status == "captured");
    CHECK(rows[1].status == "ok");
  }
}
