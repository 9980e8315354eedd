#include "critscat/asymptotics.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace critscat {

namespace {

double lambda_min(const PotentialModel& m) {
  if (m.lambda().empty()) return 1.0;
  return *std::min_element(m.lambda().begin(), m.lambda().end());
}

AsymptoticData fit_line(const std::vector<double>& ts, const std::vector<Vec>& xs, double rho) {
  const std::size_t N = ts.size();
  if (N < 3) throw NoAsymptoteError("asymptote fit window has fewer than 3 samples");
  const int n = static_cast<int>(xs.front().size());
  std::vector<double> w(N);
  double sw = 0, st = 0;
  for (std::size_t k = 0; k < N; ++k) {
    w[k] = std::pow(std::max(xs[k].norm(), 1.0), rho - 1.0);
    sw += w[k];
    st += w[k] * ts[k];
  }
  const double tc = st / sw;
  double stt = 0;
  for (std::size_t k = 0; k < N; ++k) stt += w[k] * (ts[k] - tc) * (ts[k] - tc);
  if (!(stt > 0)) throw NoAsymptoteError("degenerate asymptote fit window");
  Vec mean = Vec::Zero(n), slope = Vec::Zero(n);
  for (std::size_t k = 0; k < N; ++k) mean += w[k] * xs[k];
  mean /= sw;
  for (std::size_t k = 0; k < N; ++k) slope += w[k] * (ts[k] - tc) * (xs[k] - mean);
  slope /= stt;
  AsymptoticData a;
  a.xi_inf = slope;
  a.x_inf = mean - slope * tc;
  double rss = 0;
  for (std::size_t k = 0; k < N; ++k) rss += w[k] * (xs[k] - a.xi_inf * ts[k] - a.x_inf).squaredNorm();
  a.residual = std::sqrt(rss / sw);
  const double s = a.xi_inf.norm();
  if (!(s > 0)) throw NoAsymptoteError("asymptotic momentum vanishes");
  a.Theta = a.xi_inf / s;
  a.Z = a.x_inf - a.x_inf.dot(a.Theta) * a.Theta;
  a.window_lo = std::min(ts.front(), ts.back());
  a.window_hi = std::max(ts.front(), ts.back());
  return a;
}

}  // namespace

Mat impact_basis(const Vec& alpha) {
  const int n = static_cast<int>(alpha.size());
  Mat B(n, std::max(n - 1, 0));
  if (n == 1) return B;
  if (n == 2) {
    B(0, 0) = -alpha[1];
    B(1, 0) = alpha[0];
    return B;
  }
  // Gram-Schmidt on the standard basis, skipping the most aligned vector.
  Eigen::Index skip = 0;
  alpha.cwiseAbs().maxCoeff(&skip);
  int col = 0;
  for (int i = 0; i < n; ++i) {
    if (i == skip) continue;
    Vec v = Vec::Unit(n, i);
    v -= v.dot(alpha) * alpha;
    for (int c = 0; c < col; ++c) v -= v.dot(B.col(c)) * B.col(c);
    B.col(col++) = v.normalized();
  }
  return B;
}

AsymptoteStart asymptote_start(const PotentialModel& model, const ImpactCoordinates& ic, const ScatterOptions& opts) {
  const int n = model.dim();
  if (ic.alpha.size() != n || ic.z.size() != n) throw DimensionError("asymptote_start: dimension mismatch");
  if (!(ic.E > 0)) throw PreconditionError("asymptote_start: energy must be positive");
  if (!model.short_range()) throw PreconditionError("asymptote_start: model is not short range");
  if (std::abs(ic.alpha.norm() - 1.0) > 1e-12) throw PreconditionError("asymptote_start: alpha must be a unit vector");
  if (std::abs(ic.z.dot(ic.alpha)) > 1e-12 * std::max(1.0, ic.z.norm()))
    throw PreconditionError("asymptote_start: z must lie in alpha^perp");

  const double sigma = ic.side == Side::incoming ? -1.0 : 1.0;
  const double speed = std::sqrt(2 * ic.E);
  const Vec b = speed * ic.alpha;
  const double ell = model.length_scale();
  const double R0 = opts.R0_scale * ell;
  AsymptoteStart st;
  st.tau = sigma * R0 / speed;
  Vec a = ic.z, bb = b;
  const double tau_far = st.tau + sigma * 10.0 * R0 / speed;
  st.tau_far = tau_far;
  if (model.family() == "free") {
    st.point = PhasePoint(a + bb * st.tau, bb);
    st.far_point = PhasePoint(a + bb * tau_far, bb);
    return st;
  }
  FlowOptions fo = opts.flow;
  fo.horizon = std::max(fo.horizon, std::abs(tau_far - st.tau) * 2);
  FlowIntegrator fi(model, fo);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const PhasePoint q(a + bb * st.tau, bb);
    const auto r = fi.integrate(AugmentedState(q), st.tau, tau_far);
    const Vec X = r.state.point.x, Xi = r.state.point.xi;
    const Vec da = ic.z - (X - Xi * tau_far);
    const Vec db = b - Xi;
    st.far_point = r.state.point;
    a += da;
    bb += db;
    st.iterations = it;
    if (da.norm() <= opts.asymptote_tol * std::max(1.0, ell) && db.norm() <= opts.asymptote_tol * speed) {
      st.point = PhasePoint(a + bb * st.tau, bb);
      // The fixed point only pins bb to asymptote_tol; put the start back on
      // the energy shell, which matters for trajectories aimed at (0,0).
      const double K = ic.E - model.value(st.point.x);
      if (K > 0) st.point.xi *= std::sqrt(2 * K) / st.point.xi.norm();
      st.correction = std::max((a - ic.z).norm(), (bb - b).norm());
      return st;
    }
    if (!std::isfinite(da.norm()) || da.norm() > 1e3 * R0)
      throw InitializationError("asymptote correction diverged");
  }
  throw InitializationError("asymptote correction did not converge");
}

PhasePoint init_from_asymptote(const PotentialModel& model, const ImpactCoordinates& ic, const ScatterOptions& opts) {
  const auto st = asymptote_start(model, ic, opts);
  FlowOptions fo = opts.flow;
  fo.horizon = std::max(fo.horizon, std::abs(st.tau) * 2);
  FlowIntegrator fi(model, fo);
  return fi.integrate(AugmentedState(st.point), st.tau, 0.0).state.point;
}

AsymptoticData extract_asymptotics(const TrajectorySegment& traj, double rho, double R_fit) {
  const auto& S = traj.samples;
  if (S.size() < 3) throw NoAsymptoteError("trajectory too short for an asymptote fit");
  const double dir = S.back().t >= S.front().t ? 1.0 : -1.0;
  std::size_t k0 = S.size();
  for (std::size_t k = 0; k < S.size(); ++k) {
    const auto& p = S[k].point;
    if (p.x.norm() >= R_fit && dir * p.x.dot(p.xi) > 0) {
      k0 = k;
      break;
    }
  }
  if (k0 == S.size()) throw NoAsymptoteError("trajectory does not leave the fit radius");
  const double T_fit = S[k0].t;
  const double len = std::abs(T_fit - S.front().t);
  std::vector<double> ts;
  std::vector<Vec> xs;
  for (std::size_t k = k0; k < S.size(); ++k) {
    if (len > 0 && std::abs(S[k].t - T_fit) > len) break;
    ts.push_back(S[k].t);
    xs.push_back(S[k].point.x);
  }
  return fit_line(ts, xs, rho);
}

EscapeRun escape_run(const PotentialModel& model, const AugmentedState& s, double t0, double dir,
                     const ScatterOptions& opts, const StepObserver& observer) {
  const PhasePoint& p = s.point;
  const double E = model.energy(p);
  if (!(E > 0)) throw NoAsymptoteError("non-positive energy: no free asymptote");
  const double speed = std::sqrt(2 * E);
  const double lam = lambda_min(model);
  const double T_max = 4.0 * (opts.R_fit + p.x.norm()) / speed + opts.capture_horizon / lam;
  FlowOptions fo = opts.flow;
  fo.horizon = std::max(fo.horizon, 4 * T_max);
  FlowIntegrator fi(model, fo);
  bool captured = false, out = false;
  auto obs = [&](double t, const AugmentedState& st) {
    if (observer && !observer(t, st)) return false;
    const PhasePoint& q = st.point;
    if (q.norm() < opts.capture_threshold) {
      const double d = q.x.dot(q.xi) - q.xi.dot(model.gradient(q.x));
      if (d * dir < 0) {
        captured = true;
        return false;
      }
    }
    if (q.x.norm() >= opts.R_fit && dir * q.x.dot(q.xi) > 0) {
      out = true;
      return false;
    }
    return true;
  };
  const auto r = fi.integrate(s, t0, t0 + dir * T_max, obs);
  if (captured) throw CapturedError("trajectory converges to the fixed point (0,0)");
  if (!out) {
    if (r.stopped_early) throw NoAsymptoteError("trajectory following was interrupted");
    throw NoAsymptoteError("trajectory did not escape within the horizon");
  }

  const double T_fit = r.t;
  const double len = std::max(std::abs(T_fit - t0), opts.R_fit / speed);
  std::vector<double> stops(static_cast<std::size_t>(opts.fit_samples));
  for (int k = 0; k < opts.fit_samples; ++k) stops[k] = T_fit + dir * len * (k + 1) / opts.fit_samples;
  std::vector<double> ts{T_fit};
  std::vector<Vec> xs{r.state.point.x};
  std::size_t next = 0;
  auto rec = [&](double t, const AugmentedState& st) {
    if (observer && !observer(t, st)) return false;
    if (next < stops.size() && t == stops[next]) {
      ts.push_back(t);
      xs.push_back(st.point.x);
      ++next;
    }
    return true;
  };
  const auto r2 = fi.integrate(r.state, T_fit, stops.back(), rec, stops);
  if (r2.stopped_early) throw NoAsymptoteError("trajectory following was interrupted");
  EscapeRun run;
  run.asym = fit_line(ts, xs, model.rho());
  run.end = r2.state;
  run.t_end = r2.t;
  return run;
}

AsymptoticData escape_asymptotics(const PotentialModel& model, const PhasePoint& p, double t0, double dir,
                                  const ScatterOptions& opts) {
  return escape_run(model, AugmentedState(p), t0, dir, opts).asym;
}

double free_tail_potential_integral(const PotentialModel& model, const Vec& x_inf, const Vec& xi_inf, double t_from,
                                    double dir) {
  if (model.family() == "free") return 0.0;
  auto f = [&](double s) { return model.value(Vec(x_inf + xi_inf * (t_from + dir * s))); };
  // Skip the numerically zero tail of fast-decaying models.
  if (std::abs(f(0.0)) < 1e-300) return 0.0;
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity());
}

ScatteringData scattering_data(const PotentialModel& model, const Vec& omega, const Vec& z_minus, double E,
                               const ScatterOptions& opts) {
  ImpactCoordinates ic{omega, z_minus, E, Side::incoming};
  const auto st = asymptote_start(model, ic, opts);
  ScatteringData d;
  d.out = escape_asymptotics(model, st.point, st.tau, 1.0, opts);
  d.theta = d.out.Theta;
  d.z_plus = d.out.Z;
  return d;
}

}  // namespace critscat
