#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's solvers; only model evaluation is shared.

#include "critscat/potential.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <complex>
#include <numbers>

namespace oracle {

using critscat::PotentialModel;
using critscat::Vec;

/// Closed-form radial barrier E0 g(a r^2), a = lambda^2 / (2 E0), with
/// g(s) = exp(-s) (power = 0) or (1 + s/p)^(-p).
struct RadialProfile {
  double E0 = 1.0;
  double lambda = 1.0;
  double power = 0.0;

  double a() const { return lambda * lambda / (2 * E0); }
  double value(double r) const {
    const double s = a() * r * r;
    return power == 0.0 ? E0 * std::exp(-s) : E0 * std::pow(1.0 + s / power, -power);
  }
  /// V(r) / V(rt) - 1 with d = r^2 - rt^2, free of cancellation.
  double rel_change(double rt2, double d) const {
    if (power == 0.0) return std::expm1(-a() * d);
    return std::expm1(-power * std::log1p(a() * d / power / (1.0 + a() * rt2 / power)));
  }
};

/// Classical deflection angle chi(b) = pi - 2 b int_{r_t}^inf dr / (r^2 sqrt(F)),
/// F = 1 - V/E - b^2/r^2. With r = r_t / (1 - w^2) and F = w^2 (2 - w^2) G the
/// integrand 2 / (r_t sqrt((2 - w^2) G)) is smooth on [0, 1].
inline double deflection_angle(const RadialProfile& V, double E, double b) {
  const double rb = std::abs(b);
  if (rb == 0.0) return V.E0 > E ? std::numbers::pi : 0.0;
  auto F = [&](double r) { return 1.0 - V.value(r) / E - rb * rb / (r * r); };
  const auto [lo, hi] = boost::math::tools::bisect(F, 1e-12, 1e3, [](double l, double u) { return u - l < 1e-16 * u; });
  const double rt = 0.5 * (lo + hi), rt2 = rt * rt, Vt = V.value(rt);
  auto integrand = [&](double w) {
    const double w2 = w * w, u = 1.0 - w2, D = w2 * (2.0 - w2);
    if (u <= 0.0) return 2.0 / (rt * std::sqrt((2.0 - w2) * (rb * rb / rt2)));
    const double G = rb * rb / rt2 - (Vt / E) * V.rel_change(rt2, rt2 * D / (u * u)) / D;
    return 2.0 / (rt * std::sqrt((2.0 - w2) * G));
  };
  const double I = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, 1.0, 10, 1e-15);
  const double chi = std::numbers::pi - 2.0 * rb * I;
  return b >= 0 ? chi : -chi;
}

/// Exact transmission of E0 sech^2(a x) for -h^2/2 d^2/dx^2, written as
/// 1 / (1 + (cosh s / sinh P)^2) with ratios formed in log space.
inline double eckart_transmission(double E0, double a, double E, double h) {
  const double k = std::sqrt(2.0 * E) / h;
  const double P = std::numbers::pi * k / a;
  const double D = 8.0 * E0 / (h * h) - a * a;
  if (D < 0) {
    const double c = std::cos(std::numbers::pi / (2 * a) * std::sqrt(-D));
    const double sp = std::sinh(P);
    return 1.0 / (1.0 + c * c / (sp * sp));
  }
  const double s = std::numbers::pi / (2 * a) * std::sqrt(D);
  const double ratio = std::exp(s - P) * (1.0 + std::exp(-2 * s)) / (1.0 - std::exp(-2 * P));
  return 1.0 / (1.0 + ratio * ratio);
}

/// First Born amplitude in 2D from a direct Cartesian quadrature of the
/// Fourier transform of V over [-L, L]^2:
///   f_B = -sqrt(2/(pi k)) e^{i pi/4} (1/(2 h^2)) int V(x) e^{-i q.x} dx,
/// q = k (theta_vec - omega), omega = e1.
inline std::complex<double> born_cartesian_2d(const PotentialModel& m, double E, double h, double theta, double L) {
  const double k = std::sqrt(2.0 * E) / h;
  const double qx = k * (std::cos(theta) - 1.0), qy = k * std::sin(theta);
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  auto inner = [&](double x, bool re) {
    auto fy = [&](double y) {
      Vec p(2);
      p << x, y;
      const double ph = qx * x + qy * y;
      return m.value(p) * (re ? std::cos(ph) : -std::sin(ph));
    };
    return GK::integrate(fy, -L, L, 12, 1e-12);
  };
  const double re = GK::integrate([&](double x) { return inner(x, true); }, -L, L, 12, 1e-12);
  const double im = GK::integrate([&](double x) { return inner(x, false); }, -L, L, 12, 1e-12);
  const std::complex<double> ft(re, im);
  const std::complex<double> pre =
      -std::sqrt(2.0 / (std::numbers::pi * k)) * std::polar(1.0, std::numbers::pi / 4) / (2.0 * h * h);
  return pre * ft;
}

/// Closed form of the normalized coherent state at a point.
inline std::complex<double> coherent_value(const Vec& x, const Vec& x0, const Vec& xi0, double h) {
  const int n = static_cast<int>(x.size());
  const Vec d = x - x0;
  const double amp = std::pow(std::numbers::pi * h, -0.25 * n) * std::exp(-d.squaredNorm() / (2 * h));
  return std::polar(amp, xi0.dot(d) / h);
}

/// Gaussian barrier value in 50-digit arithmetic.
inline double gaussian_value_hp(double E0, const std::vector<double>& lambda, const std::vector<double>& x) {
  using F = boost::multiprecision::cpp_bin_float_50;
  F s = 0;
  for (std::size_t j = 0; j < x.size(); ++j) s += F(lambda[j]) * F(lambda[j]) * F(x[j]) * F(x[j]);
  return static_cast<double>(F(E0) * exp(-s / (2 * F(E0))));
}

/// Exact linearized flow exp(t [[0, I], [diag(l^2), 0]]).
inline critscat::Mat quadratic_propagator(const std::vector<double>& lambda, double t) {
  const int n = static_cast<int>(lambda.size());
  critscat::Mat M = critscat::Mat::Zero(2 * n, 2 * n);
  for (int j = 0; j < n; ++j) {
    const double l = lambda[j];
    M(j, j) = std::cosh(l * t);
    M(j, n + j) = std::sinh(l * t) / l;
    M(n + j, j) = l * std::sinh(l * t);
    M(n + j, n + j) = std::cosh(l * t);
  }
  return M;
}

}  // namespace oracle
