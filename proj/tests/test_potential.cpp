#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "critscat/potential.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>

#include <numbers>

using namespace critscat;

namespace {
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}
}  // namespace

TEST_CASE("gaussian barrier: value, gradient and hessian at the top") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  const Evaluation e = evaluate(m, v2(0, 0));
  CHECK(e.value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(e.gradient.norm() == 0.0);
  Mat want(2, 2);
  want << -1, 0, 0, -4;
  CHECK((e.hessian - want).norm() < 1e-14);
}

TEST_CASE("gaussian barrier value against extended precision") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  for (const auto& x : {std::vector<double>{3, 0}, {0.7, -1.3}, {-2.5, 0.4}}) {
    const double ref = oracle::gaussian_value_hp(1.0, {1.0, 2.0}, x);
    const double got = m.value(v2(x[0], x[1]));
    CHECK(std::abs(got - ref) <= 1e-12 * std::max(1e-300, std::abs(ref)) + 1e-300);
  }
}

TEST_CASE("gradient and hessian agree with finite differences") {
  for (const auto& m : {make_gaussian(1.0, {1.0, 2.0}, 0.4), make_rational(1.0, {1.0, 1.5}, 1.5)}) {
    const Vec x = v2(0.6, -0.3);
    const double e = 1e-5;
    const Vec g = m.gradient(x);
    const Mat H = m.hessian(x);
    for (int i = 0; i < 2; ++i) {
      Vec xp = x, xm = x;
      xp[i] += e;
      xm[i] -= e;
      CHECK(std::abs((m.value(xp) - m.value(xm)) / (2 * e) - g[i]) < 1e-8);
      const Vec dg = (m.gradient(xp) - m.gradient(xm)) / (2 * e);
      CHECK((dg - H.col(i)).norm() < 1e-8);
    }
  }
}

TEST_CASE("non-finite evaluation is an error") {
  const auto m = make_gaussian(1.0, {1.0, 2.0});
  Vec x = v2(std::numeric_limits<double>::quiet_NaN(), 0);
  CHECK_THROWS_AS(evaluate(m, x), ModelEvaluationError);
}

TEST_CASE("validate_assumptions") {
  SUBCASE("gaussian barrier passes") {
    const auto r = validate_assumptions(make_gaussian(1.0, {1.0, 2.0}));
    for (const auto& msg : r.messages) MESSAGE(msg);
    CHECK(r.max_at_origin);
    CHECK(r.decay_ok);
    CHECK(r.unique_max);
    CHECK(r.trapped_probe_ok);
  }
  SUBCASE("second bump at least as high fails the unique maximum check") {
    const auto r = validate_assumptions(make_double_bump(1.0, 1.0, 3.0, 1.2, 0.5));
    CHECK_FALSE(r.unique_max);
    CHECK_FALSE(r.all_passed());
  }
  SUBCASE("free model fails the barrier check") {
    const auto r = validate_assumptions(make_free(2));
    CHECK_FALSE(r.max_at_origin);
  }
}

TEST_CASE("linearization") {
  SUBCASE("principal axes model") {
    const auto L = linearization(make_gaussian(1.0, {1.0, 2.0}));
    CHECK(L.lambda[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(L.lambda[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(std::abs(L.axes(0, 0)) - 1.0) < 1e-12);
    CHECK(std::abs(std::abs(L.axes(1, 1)) - 1.0) < 1e-12);
  }
  SUBCASE("rotated model against an eigen-decomposition of a finite-difference hessian") {
    const double ang = std::numbers::pi / 6;
    const auto m = make_gaussian(1.0, {1.0, 2.0}, ang);
    const auto L = linearization(m);
    // central second differences of V at the origin
    const double e = 1e-4;
    Mat H(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        Vec a = Vec::Zero(2), b = Vec::Zero(2);
        a[i] = e;
        b[j] = e;
        H(i, j) = (m.value(a + b) - m.value(a - b) - m.value(b - a) + m.value(-a - b)) / (4 * e * e);
      }
    Eigen::SelfAdjointEigenSolver<Mat> es(-H);
    CHECK(std::sqrt(es.eigenvalues()[0]) == doctest::Approx(L.lambda[0]).epsilon(1e-6));
    CHECK(std::sqrt(es.eigenvalues()[1]) == doctest::Approx(L.lambda[1]).epsilon(1e-6));
    for (int j = 0; j < 2; ++j) CHECK(std::abs(std::abs(es.eigenvectors().col(j).dot(L.axes.col(j))) - 1.0) < 1e-6);
    CHECK(std::abs(std::abs(L.axes(0, 0)) - std::cos(ang)) < 1e-10);
  }
  SUBCASE("isotropic") {
    const auto L = linearization(make_gaussian(1.0, {1.0, 1.0}));
    CHECK(L.lambda[0] == doctest::Approx(1.0));
    CHECK(L.lambda[1] == doctest::Approx(1.0));
    CHECK((L.axes.transpose() * L.axes - Mat::Identity(2, 2)).norm() < 1e-12);
  }
  SUBCASE("well has no barrier") { CHECK_THROWS_AS(linearization(make_gaussian_well(2, 1.0, 1.0)), AssumptionViolation); }
}

TEST_CASE("model json round trip and hash stability") {
  const auto m = make_rational(1.5, {1.0, 2.0}, 2.0);
  nlohmann::json j = m.spec();
  const auto back = model_from_json(j);
  CHECK(back.hash() == m.hash());
  CHECK(back.value(v2(0.3, 0.2)) == m.value(v2(0.3, 0.2)));
  CHECK_THROWS_AS(model_from_text(R"({"family":"gaussian","n":2,"E0":1})"), ConfigError);
}
