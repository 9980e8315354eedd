#include "critscat/flow.hpp"

#include "critscat/io.hpp"

#include <boost/numeric/odeint/stepper/runge_kutta_fehlberg78.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace critscat {

namespace {

using State = std::vector<double>;
using Stepper = boost::numeric::odeint::runge_kutta_fehlberg78<State>;

struct Layout {
  int n = 0;
  int k = 0;
  std::size_t size() const { return static_cast<std::size_t>(2 * n + 2 * n * k + 2); }
  std::size_t tangent(int col) const { return static_cast<std::size_t>(2 * n + 2 * n * col); }
  std::size_t quad() const { return static_cast<std::size_t>(2 * n + 2 * n * k); }
};

State pack(const AugmentedState& s, const Layout& L) {
  State y(L.size());
  for (int i = 0; i < L.n; ++i) {
    y[i] = s.point.x[i];
    y[L.n + i] = s.point.xi[i];
  }
  for (int c = 0; c < L.k; ++c)
    for (int i = 0; i < 2 * L.n; ++i) y[L.tangent(c) + i] = s.tangents(i, c);
  y[L.quad()] = s.xi2_integral;
  y[L.quad() + 1] = s.v_integral;
  return y;
}

AugmentedState unpack(const State& y, const Layout& L) {
  AugmentedState s;
  s.point.x = Eigen::Map<const Vec>(y.data(), L.n);
  s.point.xi = Eigen::Map<const Vec>(y.data() + L.n, L.n);
  s.tangents.resize(2 * L.n, L.k);
  for (int c = 0; c < L.k; ++c)
    for (int i = 0; i < 2 * L.n; ++i) s.tangents(i, c) = y[L.tangent(c) + i];
  s.xi2_integral = y[L.quad()];
  s.v_integral = y[L.quad() + 1];
  return s;
}

double energy_of(const PotentialModel& m, const State& y, int n) {
  Eigen::Map<const Vec> x(y.data(), n), xi(y.data() + n, n);
  return 0.5 * xi.squaredNorm() + m.value(x);
}

class System {
 public:
  System(const PotentialModel& m, Layout L) : m_(m), L_(L) {}
  void operator()(const State& y, State& dy, double /*t*/) const {
    const int n = L_.n;
    Eigen::Map<const Vec> x(y.data(), n), xi(y.data() + n, n);
    const Vec g = m_.gradient(x);
    for (int i = 0; i < n; ++i) {
      dy[i] = xi[i];
      dy[n + i] = -g[i];
    }
    if (L_.k > 0) {
      const Mat H = m_.hessian(x);
      for (int c = 0; c < L_.k; ++c) {
        const std::size_t o = L_.tangent(c);
        Eigen::Map<const Vec> wx(y.data() + o, n), wxi(y.data() + o + n, n);
        const Vec hw = H * wx;
        for (int i = 0; i < n; ++i) {
          dy[o + i] = wxi[i];
          dy[o + n + i] = -hw[i];
        }
      }
    }
    dy[L_.quad()] = xi.squaredNorm();
    dy[L_.quad() + 1] = m_.value(x);
  }

 private:
  const PotentialModel& m_;
  Layout L_;
};

// Scaled error: base and quadratures componentwise, tangent columns against
// their own norm so a growing column does not swamp the others.
double error_ratio(const State& y0, const State& y1, const State& err, const Layout& L, const FlowOptions& o) {
  double r = 0.0;
  auto comp = [&](std::size_t i) {
    const double sc = o.abs_tol + o.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    r = std::max(r, std::abs(err[i]) / sc);
  };
  for (int i = 0; i < 2 * L.n; ++i) comp(static_cast<std::size_t>(i));
  comp(L.quad());
  comp(L.quad() + 1);
  for (int c = 0; c < L.k; ++c) {
    double nrm = 0.0, e = 0.0;
    for (int i = 0; i < 2 * L.n; ++i) {
      nrm = std::max(nrm, std::abs(y1[L.tangent(c) + i]));
      e = std::max(e, std::abs(err[L.tangent(c) + i]));
    }
    r = std::max(r, e / (o.abs_tol + o.rel_tol * nrm));
  }
  for (double v : err)
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
  return r;
}

}  // namespace

FlowIntegrator::FlowIntegrator(const PotentialModel& model, FlowOptions opts) : model_(&model), opts_(opts) {}

IntegrationResult FlowIntegrator::integrate(AugmentedState s, double t0, double t1, const StepObserver& observer,
                                            std::span<const double> stops) const {
  const PotentialModel& m = *model_;
  const FlowOptions& o = opts_;
  const int n = m.dim();
  if (s.point.dim() != n) throw DimensionError("integrate: point dimension does not match model");
  if (!s.point.finite()) throw PreconditionError("integrate: non-finite initial point");
  if (std::abs(t1 - t0) > o.horizon) throw PreconditionError("integrate: |t| exceeds the configured horizon");
  if (s.tangents.size() > 0 && s.tangents.rows() != 2 * n)
    throw DimensionError("integrate: tangent block must have 2n rows");

  Layout L{n, static_cast<int>(s.tangents.cols())};
  IntegrationResult res;
  res.t = t0;
  if (observer && !observer(t0, s)) {
    res.state = std::move(s);
    res.stopped_early = true;
    return res;
  }
  if (t1 == t0) {
    res.state = std::move(s);
    return res;
  }

  const double dir = t1 > t0 ? 1.0 : -1.0;
  std::vector<double> pending;
  for (double st : stops)
    if ((st - t0) * dir > 0 && (t1 - st) * dir > 0) pending.push_back(st);
  std::sort(pending.begin(), pending.end(), [dir](double a, double b) { return a * dir < b * dir; });
  std::size_t next_stop = 0;

  System sys(m, L);
  Stepper stepper;
  State y = pack(s, L), ynew(L.size()), err(L.size());
  const double E_start = energy_of(m, y, n);
  const double E_ref = std::abs(E_start) > 0 ? std::abs(E_start) : 1.0;
  double E_prev = E_start;

  double t = t0;
  double h = dir * std::min(o.initial_step, o.max_step);
  while ((t1 - t) * dir > 0) {
    if (res.accepted + res.rejected >= o.max_steps)
      throw IntegrationFailure("integrate: step budget exhausted", t, unpack(y, L).point);
    double target = t1;
    if (next_stop < pending.size()) target = pending[next_stop];
    double step = h;
    bool clipped = false;
    if ((t + step - target) * dir >= 0) {
      step = target - t;
      clipped = true;
    }

    stepper.do_step(sys, y, t, ynew, step, err);
    double ratio = error_ratio(y, ynew, err, L, o);
    double E_new = std::numeric_limits<double>::quiet_NaN();
    if (std::isfinite(ratio)) {
      E_new = energy_of(m, ynew, n);
      if (!std::isfinite(E_new)) {
        ratio = std::numeric_limits<double>::infinity();
      } else if (o.energy_guard) {
        ratio = std::max(ratio, std::abs(E_new - E_prev) / (0.05 * o.energy_drift_tol * E_ref));
      }
    }

    const double grow = ratio > 0 ? 0.9 * std::pow(ratio, -1.0 / 8.0) : 5.0;
    if (ratio <= 1.0) {
      ++res.accepted;
      t = clipped ? target : t + step;
      if (clipped && next_stop < pending.size() && target == pending[next_stop]) ++next_stop;
      y.swap(ynew);
      E_prev = E_new;
      res.max_energy_drift = std::max(res.max_energy_drift, std::abs(E_new - E_start) / E_ref);
      // A clipped step says nothing about the natural step; keep h unless it
      // was the one that succeeded.
      if (!clipped || std::abs(step) >= std::abs(h)) h = step * std::clamp(grow, 0.2, 5.0);
      if (std::abs(h) > o.max_step) h = dir * o.max_step;
      if (observer) {
        AugmentedState cur = unpack(y, L);
        if (!observer(t, cur)) {
          res.state = std::move(cur);
          res.t = t;
          res.stopped_early = true;
          return res;
        }
      }
    } else {
      ++res.rejected;
      h = step * std::clamp(std::isfinite(grow) ? grow : 0.2, 0.2, 0.9);
      if (std::abs(h) < o.min_step)
        throw IntegrationFailure("integrate: step size underflow", t, unpack(y, L).point);
    }
  }
  res.state = unpack(y, L);
  res.t = t;
  return res;
}

Vec vector_field(const PotentialModel& model, const PhasePoint& p) {
  const int n = model.dim();
  if (p.dim() != n) throw DimensionError("vector_field: dimension mismatch");
  Vec v(2 * n);
  v << p.xi, -model.gradient(p.x);
  return v;
}

PhasePoint flow(const PotentialModel& model, const PhasePoint& p, double t, const FlowOptions& opts) {
  FlowIntegrator fi(model, opts);
  return fi.integrate(AugmentedState(p), 0.0, t).state.point;
}

VariationalFlow flow_with_variational(const PotentialModel& model, const PhasePoint& p, double t,
                                      const FlowOptions& opts) {
  const int n = model.dim();
  FlowIntegrator fi(model, opts);
  auto r = fi.integrate(AugmentedState(p, Mat::Identity(2 * n, 2 * n)), 0.0, t);
  return {r.state.point, r.state.tangents};
}

double symplectic_defect(const Mat& M) {
  const int n = static_cast<int>(M.rows() / 2);
  const Mat J = symplectic_j(n);
  const double d = (M.transpose() * J * M - J).cwiseAbs().maxCoeff();
  const double s = M.cwiseAbs().maxCoeff();
  return d / std::max(1.0, s * s);
}

TrajectorySegment trajectory(const PotentialModel& model, const PhasePoint& p, double t, const FlowOptions& opts,
                             bool variational, std::span<const double> sample_times) {
  const int n = model.dim();
  TrajectorySegment seg;
  seg.energy = model.energy(p);
  seg.options = opts;
  seg.model_hash = model.hash_hex();
  const bool all = sample_times.empty();
  std::vector<double> wanted(sample_times.begin(), sample_times.end());
  auto is_wanted = [&](double tt) { return std::find(wanted.begin(), wanted.end(), tt) != wanted.end(); };
  FlowIntegrator fi(model, opts);
  AugmentedState s0(p, variational ? Mat(Mat::Identity(2 * n, 2 * n)) : Mat());
  auto obs = [&](double tt, const AugmentedState& s) {
    if (all || is_wanted(tt)) seg.samples.push_back({tt, s.point, s.tangents});
    return true;
  };
  auto r = fi.integrate(s0, 0.0, t, obs, sample_times);
  if (!all && is_wanted(t) && (seg.samples.empty() || seg.samples.back().t != t))
    seg.samples.push_back({t, r.state.point, r.state.tangents});
  seg.accepted = r.accepted;
  seg.rejected = r.rejected;
  seg.max_energy_drift = r.max_energy_drift;
  return seg;
}

std::string to_string(EscapeKind k) {
  switch (k) {
    case EscapeKind::escaped:
      return "escaped";
    case EscapeKind::converged_to_origin:
      return "converged_to_origin";
    case EscapeKind::undecided:
      break;
  }
  return "undecided";
}

EscapeOutcome escape_time(const PotentialModel& model, const PhasePoint& p, double R, double T_max,
                          const FlowOptions& opts, double converge_threshold) {
  if (!(R > 0)) throw PreconditionError("escape_time: R must be positive");
  EscapeOutcome out;
  out.min_norm = p.norm();
  if (p.x.norm() > R) {
    out.kind = EscapeKind::escaped;
    return out;
  }
  FlowOptions o = opts;
  o.horizon = std::max(o.horizon, std::abs(T_max));
  FlowIntegrator fi(model, o);
  double t_prev = 0.0;
  PhasePoint prev = p;
  const double dir = T_max >= 0 ? 1.0 : -1.0;
  auto obs = [&](double t, const AugmentedState& s) {
    const PhasePoint& q = s.point;
    out.min_norm = std::min(out.min_norm, q.norm());
    if (q.x.norm() > R) {
      // Cubic Hermite interpolation of x(t) between the last two steps.
      const double h = t - t_prev;
      auto x_at = [&](double u) {
        const double u2 = u * u, u3 = u2 * u;
        return Vec((2 * u3 - 3 * u2 + 1) * prev.x + (u3 - 2 * u2 + u) * h * prev.xi + (-2 * u3 + 3 * u2) * q.x +
                   (u3 - u2) * h * q.xi);
      };
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (x_at(mid).norm() > R ? hi : lo) = mid;
      }
      out.kind = EscapeKind::escaped;
      out.t = t_prev + hi * h;
      return false;
    }
    if (q.norm() < converge_threshold) {
      // Forward in time: the squared radius must be decreasing; backward: increasing.
      const double d = 2.0 * (q.x.dot(q.xi) - q.xi.dot(model.gradient(q.x)));
      if (d * dir < 0) {
        out.kind = EscapeKind::converged_to_origin;
        out.t = t;
        return false;
      }
    }
    t_prev = t;
    prev = q;
    return true;
  };
  auto r = fi.integrate(AugmentedState(p), 0.0, T_max, obs);
  if (!r.stopped_early) {
    out.kind = EscapeKind::undecided;
    out.t = r.t;
  }
  (void)dir;
  return out;
}

void write_trajectory(const std::string& csv_path, const PotentialModel& model, const TrajectorySegment& seg) {
  const int n = model.dim();
  std::vector<std::string> header{"t"};
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (int i = 1; i <= n; ++i) header.push_back("xi" + std::to_string(i));
  header.push_back("energy");
  io::CsvTable tab(header);
  for (const auto& s : seg.samples) {
    std::vector<double> row{s.t};
    for (int i = 0; i < n; ++i) row.push_back(s.point.x[i]);
    for (int i = 0; i < n; ++i) row.push_back(s.point.xi[i]);
    row.push_back(model.energy(s.point));
    tab.add_numeric_row(row);
  }
  io::atomic_write(csv_path, tab.str());
  std::filesystem::path side(csv_path);
  side.replace_extension(".json");
  nlohmann::json j{{"model_hash", model.hash_hex()},
                   {"model", model.spec()},
                   {"integrator", kIntegratorName},
                   {"abs_tol", seg.options.abs_tol},
                   {"rel_tol", seg.options.rel_tol},
                   {"energy_drift_tol", seg.options.energy_drift_tol},
                   {"symplectic_tol", seg.options.symplectic_tol},
                   {"energy", seg.energy},
                   {"accepted_steps", seg.accepted},
                   {"rejected_steps", seg.rejected},
                   {"max_energy_drift", seg.max_energy_drift}};
  io::atomic_write(side, j.dump(2) + "\n");
}

}  // namespace critscat
