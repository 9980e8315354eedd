#include "critscat/manifolds.hpp"

#include "critscat/io.hpp"

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace critscat {

namespace {

struct SeedGeometry {
  Linearization lin;
  int n = 0;
  double ell = 1.0;
  double lam1 = 1.0;
  double eps = 0.0;    // absolute
  double delta = 0.0;  // absolute
  double s = 0.0;      // flow time from the seed to Lyapunov radius eps
  Vec scale;           // c_j = u_j * scale_j
  double sgn = 1.0;    // +1 for Lambda+, -1 for Lambda-
  double dir = 1.0;    // outward time direction
  double E0 = 0.0;
};

SeedGeometry geometry(const PotentialModel& model, ManifoldSide side, const ManifoldOptions& o) {
  if (!(model.E0() > 0) || model.lambda().empty())
    throw PreconditionError("manifolds need a barrier model with a non-degenerate maximum");
  SeedGeometry g;
  g.lin = linearization(model);
  g.n = model.dim();
  g.ell = model.length_scale();
  g.lam1 = g.lin.lambda[0];
  g.eps = o.eps * g.ell;
  g.delta = o.seed_depth * g.eps;
  g.s = std::log(g.eps / g.delta) / g.lam1;
  g.scale.resize(g.n);
  for (int j = 0; j < g.n; ++j) g.scale[j] = g.ell * std::pow(g.delta / g.ell, g.lin.lambda[j] / g.lam1);
  g.sgn = side == ManifoldSide::plus ? 1.0 : -1.0;
  g.dir = g.sgn;
  g.E0 = model.E0();
  return g;
}

FlowOptions manifold_flow(const SeedGeometry& g, const ManifoldOptions& o) {
  FlowOptions f;
  f.rel_tol = o.rel_tol;
  f.abs_tol = o.rel_tol * 1e-20 * g.ell;
  f.max_step = 0.1 / g.lam1;
  f.horizon = 1e6;
  return f;
}

Mat sphere_basis(const Vec& u) {
  // Orthonormal basis of u^perp; reuse the impact-plane construction.
  return impact_basis(u);
}

AugmentedState seed_state(const SeedGeometry& g, const Vec& u, const Mat& B) {
  const Vec c = u.cwiseProduct(g.scale);
  const Vec lc = g.lin.lambda.cwiseProduct(c);
  PhasePoint p(g.lin.axes * c, g.sgn * (g.lin.axes * lc));
  Mat T(2 * g.n, B.cols());
  for (int k = 0; k < B.cols(); ++k) {
    const Vec dc = B.col(k).cwiseProduct(g.scale);
    T.col(k) << g.lin.axes * dc, g.sgn * (g.lin.axes * g.lin.lambda.cwiseProduct(dc));
  }
  return AugmentedState(p, T);
}

double seed_tail_action(const SeedGeometry& g, const Vec& u) {
  const Vec c = u.cwiseProduct(g.scale);
  double t = 0;
  for (int j = 0; j < g.n; ++j) t += 0.5 * g.lin.lambda[j] * c[j] * c[j];
  return t;
}

// Fits y(t') = e^{-lambda_1 t'} x(t') = g + sum_k (a_k + b_k t') e^{kappa_k t'}.
GFit fit_g(const SeedGeometry& g, const std::vector<double>& ts, const std::vector<Vec>& xs,
           const ManifoldOptions& o) {
  std::vector<double> kappas;
  auto add = [&](double k) {
    if (k <= 1e-9 * g.lam1) return;
    for (double q : kappas)
      if (std::abs(q - k) <= 1e-9 * g.lam1) return;
    kappas.push_back(k);
  };
  for (int j = 0; j < g.n; ++j) add(g.lin.lambda[j] - g.lam1);
  add(g.lam1);
  const int cols = 1 + 2 * static_cast<int>(kappas.size());
  GFit fit;
  const int N = static_cast<int>(ts.size());
  if (N < cols + 3) {
    fit.g = Vec::Zero(g.n);
    if (N > 0) fit.g = xs.front() * std::exp(-g.lam1 * ts.front());
    fit.low_confidence = true;
    fit.residual = 1.0;
    return fit;
  }
  const double t_ref = ts.back();
  Mat D(N, cols), Y(N, g.n);
  double ymax = 0;
  for (int i = 0; i < N; ++i) {
    const double dt = (ts[i] - t_ref) * g.lam1;
    D(i, 0) = 1.0;
    for (std::size_t k = 0; k < kappas.size(); ++k) {
      const double e = std::exp(kappas[k] / g.lam1 * dt);
      D(i, 1 + 2 * k) = e;
      D(i, 2 + 2 * k) = dt * e;
    }
    Y.row(i) = (xs[i] * std::exp(-g.lam1 * ts[i])).transpose();
    ymax = std::max(ymax, Y.row(i).norm());
  }
  const Mat C = D.colPivHouseholderQr().solve(Y);
  fit.g = C.row(0).transpose();
  const Mat R = D * C - Y;
  fit.residual = ymax > 0 ? std::sqrt(R.squaredNorm() / N) / ymax : 0.0;
  fit.low_confidence = fit.g.norm() < o.g_low_confidence * ymax || fit.residual > 1e-6;
  return fit;
}

struct TrajectoryRun {
  std::vector<ManifoldSample> samples;
  GFit g_seed;
  double max_energy_error = 0;
};

// Integrates the seed trajectory of direction u and collects the g-window
// data. If `targets` is non-empty the samples are taken at exactly those
// outward times; otherwise samples are taken every `mesh` of phase-space
// travel once tau >= 0, until |x| > R_patch or tau_max.
TrajectoryRun run_seed(const PotentialModel& model, const SeedGeometry& g, const Vec& u_in,
                       const std::vector<double>& targets, const ManifoldOptions& o, bool frames = true) {
  const Vec u = u_in.normalized();
  const Mat B = sphere_basis(u);
  AugmentedState s0 = seed_state(g, u, frames ? B : Mat(2 * g.n, 0));
  const double tail = seed_tail_action(g, u);
  FlowIntegrator fi(model, manifold_flow(g, o));

  const double lo = o.g_window_lo * g.ell, hi = o.g_window_hi * g.ell;
  std::vector<double> wt;
  std::vector<Vec> wx;
  TrajectoryRun run;
  const double R = o.R_patch * g.ell;
  const bool fixed = !targets.empty();
  std::vector<double> stops;
  for (double t : targets) stops.push_back(g.dir * (t + g.s));
  std::sort(stops.begin(), stops.end(), [&](double a, double b) { return a * g.dir < b * g.dir; });
  std::size_t next = 0;
  PhasePoint last_rec;
  bool have_last = false;

  auto make_sample = [&](double t, const AugmentedState& st) {
    ManifoldSample m;
    m.rho = st.point;
    m.tau = g.dir * t - g.s;
    m.u = u;
    m.u_basis = B;
    if (frames) {
      m.frame.resize(2 * g.n, g.n);
      m.frame.leftCols(g.n - 1) = st.tangents;
      m.frame.col(g.n - 1) = vector_field(model, st.point);
    }
    m.action = g.dir * st.xi2_integral + tail;
    run.max_energy_error = std::max(run.max_energy_error, std::abs(model.energy(st.point) - g.E0) / g.E0);
    return m;
  };

  const double t_end = fixed ? stops.back() : g.dir * (o.tau_max / g.lam1 + g.s);
  auto obs = [&](double t, const AugmentedState& st) {
    const double xn = st.point.x.norm();
    if (xn >= lo && xn <= hi) {
      wt.push_back(g.dir * t);
      wx.push_back(st.point.x);
    }
    if (fixed) {
      while (next < stops.size() && t == stops[next]) {
        run.samples.push_back(make_sample(t, st));
        ++next;
      }
      return true;
    }
    const double tau = g.dir * t - g.s;
    if (tau >= 0) {
      if (xn > R) {
        // Always keep the first point beyond R_patch so traces can start there.
        run.samples.push_back(make_sample(t, st));
        return false;
      }
      const bool due = !have_last || (st.point.packed() - last_rec.packed()).norm() >= o.mesh;
      if (due) {
        run.samples.push_back(make_sample(t, st));
        last_rec = st.point;
        have_last = true;
      }
    }
    return true;
  };
  const auto res = fi.integrate(s0, 0.0, t_end, obs, stops);
  if (fixed) {
    // The final target coincides with the end time.
    while (next < stops.size()) {
      run.samples.push_back(make_sample(res.t, res.state));
      ++next;
    }
  } else if (!res.stopped_early && (run.samples.empty() || run.samples.back().rho.x != res.state.point.x)) {
    run.samples.push_back(make_sample(res.t, res.state));
  }
  // Window not finished (point deeper than the window top): continue for the fit only.
  if (res.state.point.x.norm() < hi) {
    AugmentedState cont(res.state.point);
    auto obs2 = [&](double t, const AugmentedState& st) {
      const double xn = st.point.x.norm();
      if (xn >= lo && xn <= hi && g.dir * t > (wt.empty() ? -1e300 : wt.back())) {
        wt.push_back(g.dir * t);
        wx.push_back(st.point.x);
      }
      return xn <= hi;
    };
    fi.integrate(cont, res.t, res.t + g.dir * (o.tau_max / g.lam1 + g.s), obs2);
  }
  run.g_seed = fit_g(g, wt, wx, o);
  for (auto& m : run.samples) {
    const double f = std::exp(g.lam1 * (m.tau + g.s));
    m.g = run.g_seed.g * f;
    m.g_residual = run.g_seed.residual;
    m.g_low_confidence = run.g_seed.low_confidence;
  }
  return run;
}

double max_gap(const std::vector<ManifoldSample>& a, const std::vector<ManifoldSample>& b) {
  // Largest distance from a sample of `a` to the nearest sample of `b`, and back.
  auto one = [](const std::vector<ManifoldSample>& p, const std::vector<ManifoldSample>& q) {
    double worst = 0;
    for (const auto& s : p) {
      double best = 1e300;
      const Vec v = s.rho.packed();
      for (const auto& r : q) best = std::min(best, (v - r.rho.packed()).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(one(a, b), one(b, a));
}

Vec angle_dir(double phi) {
  Vec u(2);
  u << std::cos(phi), std::sin(phi);
  return u;
}

std::vector<Vec> sphere_points(int n, int count, std::uint64_t seed) {
  std::vector<Vec> pts;
  if (n == 1) {
    pts.push_back(Vec::Constant(1, 1.0));
    pts.push_back(Vec::Constant(1, -1.0));
    return pts;
  }
  if (n == 3) {
    const double ga = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < count; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / count;
      const double r = std::sqrt(1 - z * z);
      Vec u(3);
      u << r * std::cos(ga * k), r * std::sin(ga * k), z;
      pts.push_back(u);
    }
    return pts;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (int k = 0; k < count; ++k) {
    Vec u(n);
    for (int i = 0; i < n; ++i) u[i] = nd(rng);
    pts.push_back(u.normalized());
  }
  return pts;
}

double wrap(double a) {
  while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
  while (a <= -std::numbers::pi) a += 2 * std::numbers::pi;
  return a;
}

}  // namespace

std::string to_string(ManifoldSide s) { return s == ManifoldSide::plus ? "plus" : "minus"; }

LinearSplitting linearized_splitting(const PotentialModel& model) {
  const auto lin = linearization(model);
  const int n = model.dim();
  LinearSplitting s;
  s.unstable.resize(2 * n, n);
  s.stable.resize(2 * n, n);
  for (int j = 0; j < n; ++j) {
    s.unstable.col(j) << lin.axes.col(j), lin.lambda[j] * lin.axes.col(j);
    s.stable.col(j) << lin.axes.col(j), -lin.lambda[j] * lin.axes.col(j);
  }
  return s;
}

ManifoldSample manifold_point(const PotentialModel& model, ManifoldSide side, const Vec& u, double tau,
                              const ManifoldOptions& opts) {
  if (u.size() != model.dim()) throw DimensionError("manifold_point: seed direction dimension mismatch");
  if (!(u.norm() > 0)) throw SeedError("manifold_point: zero seed direction");
  const auto g = geometry(model, side, opts);
  if (tau + g.s <= 0) throw SeedError("manifold_point: requested point lies below the seed depth");
  auto run = run_seed(model, g, u, {tau}, opts);
  if (run.samples.empty()) throw SeedError("manifold_point: integration produced no sample");
  return run.samples.front();
}

GFit g_vector(const PotentialModel& model, ManifoldSide side, const Vec& u, double tau, const ManifoldOptions& opts) {
  const auto m = manifold_point(model, side, u, tau, opts);
  return GFit{m.g, m.g_residual, m.g_low_confidence};
}

ManifoldPatch sample_manifold(const PotentialModel& model, ManifoldSide side, const ManifoldOptions& opts) {
  const auto g = geometry(model, side, opts);
  const int n = g.n;
  ManifoldPatch patch;
  patch.side = side;
  patch.eps = g.eps;
  patch.seed_radius = g.delta;
  patch.R_patch = opts.R_patch * g.ell;
  patch.mesh = opts.mesh;
  patch.model_hash = model.hash_hex();
  patch.options = opts;

  std::vector<std::vector<ManifoldSample>> trajs;
  if (n == 2) {
    struct Node {
      double phi;
      TrajectoryRun run;
    };
    std::vector<Node> nodes;
    const int N = std::max(opts.resolution, 4);
    for (int k = 0; k < N; ++k) {
      const double phi = 2 * std::numbers::pi * k / N;
      nodes.push_back({phi, run_seed(model, g, angle_dir(phi), {}, opts)});
    }
    int level = 0;
    for (; level < opts.max_refine; ++level) {
      std::vector<Node> refined;
      bool changed = false;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto& a = nodes[k];
        const auto& b = nodes[(k + 1) % nodes.size()];
        refined.push_back(a);
        if (max_gap(a.run.samples, b.run.samples) > 2 * opts.mesh) {
          double phib = b.phi;
          if (phib <= a.phi) phib += 2 * std::numbers::pi;
          const double mid = 0.5 * (a.phi + phib);
          refined.push_back({mid, run_seed(model, g, angle_dir(mid), {}, opts)});
          changed = true;
        }
      }
      nodes = std::move(refined);
      if (!changed) break;
    }
    patch.refinement_level = level;
    for (auto& nd : nodes) {
      patch.max_energy_error = std::max(patch.max_energy_error, nd.run.max_energy_error);
      trajs.push_back(std::move(nd.run.samples));
    }
  } else {
    const int count = n == 1 ? 2 : (n == 3 ? opts.resolution * opts.resolution : opts.resolution * 8);
    for (const Vec& u : sphere_points(n, count, 7)) {
      auto run = run_seed(model, g, u, {}, opts);
      patch.max_energy_error = std::max(patch.max_energy_error, run.max_energy_error);
      trajs.push_back(std::move(run.samples));
    }
  }
  int id = 0;
  for (auto& tr : trajs) {
    for (auto& s : tr) {
      s.trajectory = id;
      if (s.frame.size() > 0) patch.max_lagrangian_defect = std::max(patch.max_lagrangian_defect, lagrangian_defect(s.frame));
      patch.samples.push_back(std::move(s));
    }
    ++id;
  }
  patch.trajectories = id;
  return patch;
}

Pairing pairing(const Vec& g_plus, const Vec& g_minus, double pairing_tol) {
  Pairing p;
  p.value = g_plus.dot(g_minus);
  p.in_tilde_set = std::abs(p.value) > pairing_tol * g_plus.norm() * g_minus.norm() && p.value != 0.0;
  return p;
}

double lagrangian_defect(const Mat& frame) {
  const int n = static_cast<int>(frame.rows() / 2);
  double worst = 0;
  for (int i = 0; i < frame.cols(); ++i)
    for (int j = i + 1; j < frame.cols(); ++j) {
      const Vec a = frame.col(i), b = frame.col(j);
      const double w = a.head(n).dot(b.tail(n)) - a.tail(n).dot(b.head(n));
      const double s = a.norm() * b.norm();
      if (s > 0) worst = std::max(worst, std::abs(w) / s);
    }
  return worst;
}

ManifoldSample project_to_position(const PotentialModel& model, const ManifoldPatch& patch, const Vec& z) {
  const int n = model.dim();
  if (z.size() != n) throw DimensionError("project_to_position: dimension mismatch");
  if (patch.samples.empty()) throw ProjectionError("empty manifold patch");
  const auto g = geometry(model, patch.side, patch.options);
  const ManifoldSample* best = &patch.samples.front();
  for (const auto& s : patch.samples)
    if ((s.rho.x - z).norm() < (best->rho.x - z).norm()) best = &s;
  Vec u = best->u;
  double tau = best->tau;
  const double tol = 1e-13 * g.ell + 1e-11 * z.norm();
  ManifoldSample cur = manifold_point(model, patch.side, u, tau, patch.options);
  double fn = (cur.rho.x - z).norm();
  for (int it = 0; it < 60; ++it) {
    if (fn <= tol) return cur;
    Mat J(n, n);
    J.leftCols(n - 1) = cur.frame.topLeftCorner(n, n - 1);
    J.col(n - 1) = g.dir * cur.rho.xi;
    Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec sv = svd.singularValues();
    if (sv(n - 1) <= 1e-10 * sv(0)) throw ProjectionError("singular projection (caustic) over the requested point");
    const Vec d = svd.solve(Vec(z - cur.rho.x));
    double step = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls) {
      Vec un = u;
      if (n > 1) un = (u + cur.u_basis * (step * d.head(n - 1))).normalized();
      const double tn = tau + step * d[n - 1];
      try {
        ManifoldSample cand = manifold_point(model, patch.side, un, tn, patch.options);
        const double f2 = (cand.rho.x - z).norm();
        if (f2 < fn) {
          u = un;
          tau = tn;
          cur = std::move(cand);
          fn = f2;
          improved = true;
          break;
        }
      } catch (const SeedError&) {
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  if (fn <= 1e3 * tol) return cur;
  throw ProjectionError("projection onto the manifold did not converge (|x - z| = " + io::fmt(fn) + ")");
}

HalfAction manifold_action(const PotentialModel& model, const ManifoldPatch& patch, const Vec& z) {
  HalfAction h;
  h.sample = project_to_position(model, patch, z);
  h.S = h.sample.action;
  h.xi = h.sample.rho.xi;
  return h;
}

SphericalTracePoint trace_point(const PotentialModel& model, ManifoldSide side, const Vec& u,
                                const ManifoldOptions& opts) {
  const auto g = geometry(model, side, opts);
  auto run = run_seed(model, g, u, {}, opts, false);
  if (run.samples.empty()) throw SeedError("trace_point: seed trajectory produced no sample");
  const auto& last = run.samples.back();
  const auto asym = escape_asymptotics(model, last.rho, 0.0, g.dir, opts.scatter);
  SphericalTracePoint tp;
  tp.direction = asym.Theta;
  tp.Z = asym.Z;
  tp.cotangent = -std::sqrt(2 * g.E0) * asym.Z;
  tp.u = u.normalized();
  return tp;
}

SphericalTrace spherical_trace(const PotentialModel& model, const ManifoldPatch& patch) {
  if (patch.samples.empty()) throw PreconditionError("spherical_trace: empty patch");
  const auto g = geometry(model, patch.side, patch.options);
  const int n = g.n;
  SphericalTrace tr;
  for (std::size_t k = 0; k < patch.samples.size(); ++k) {
    const bool last = k + 1 == patch.samples.size() || patch.samples[k + 1].trajectory != patch.samples[k].trajectory;
    if (!last) continue;
    const auto& s = patch.samples[k];
    const auto asym = escape_asymptotics(model, s.rho, 0.0, g.dir, patch.options.scatter);
    SphericalTracePoint tp;
    tp.direction = asym.Theta;
    tp.Z = asym.Z;
    tp.cotangent = -std::sqrt(2 * g.E0) * asym.Z;
    tp.u = s.u;
    tp.trajectory = s.trajectory;
    tr.points.push_back(tp);
  }
  // Local rank of the sampled locus from nearest neighbours in seed space.
  const int k_nb = std::max(2 * (n - 1), 1);
  int min_rank = n;
  for (std::size_t i = 0; i < tr.points.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < tr.points.size(); ++j)
      if (j != i) d.push_back({(tr.points[j].u - tr.points[i].u).norm(), j});
    if (static_cast<int>(d.size()) < k_nb) continue;
    std::partial_sort(d.begin(), d.begin() + k_nb, d.end());
    Mat D(2 * n, k_nb);
    for (int c = 0; c < k_nb; ++c) {
      const auto& q = tr.points[d[c].second];
      D.col(c) << q.direction - tr.points[i].direction, q.cotangent - tr.points[i].cotangent;
    }
    Eigen::JacobiSVD<Mat> svd(D);
    const Vec sv = svd.singularValues();
    int r = 0;
    for (int c = 0; c < sv.size(); ++c)
      if (sv[c] > 1e-3 * sv[0] && sv[0] > 0) ++r;
    min_rank = std::min(min_rank, r);
  }
  tr.rank = tr.points.size() > 1 ? min_rank : 0;
  return tr;
}

CriticalAction critical_action_at(const PotentialModel& model, ManifoldSide side, const Vec& u,
                                  const ManifoldOptions& opts) {
  const auto g = geometry(model, side, opts);
  const auto m = manifold_point(model, side, u, 0.0, opts);
  AugmentedState s(m.rho);
  const auto run = escape_run(model, s, 0.0, g.dir, opts.scatter);
  const auto& a = run.asym;
  const double shift = a.x_inf.dot(a.Theta) / a.xi_inf.norm();
  const double T_gamma = run.t_end + shift;
  const double tail = free_tail_potential_integral(model, a.x_inf, a.xi_inf, run.t_end, g.dir);
  CriticalAction c;
  c.S = m.action + g.dir * run.end.xi2_integral - g.dir * 2 * g.E0 * T_gamma - 2 * tail;
  c.direction = a.Theta;
  c.z = a.Z;
  c.u = u.normalized();
  return c;
}

std::vector<CriticalAction> critical_actions(const PotentialModel& model, const ManifoldPatch& patch,
                                             const Vec& direction) {
  const int n = model.dim();
  if (direction.size() != n) throw DimensionError("critical_actions: dimension mismatch");
  const Vec th = direction.normalized();
  const auto& o = patch.options;
  const auto trace = spherical_trace(model, patch);
  if (trace.rank < n - 1) throw DegenerateDirectionError("spherical trace is not (n-1)-dimensional");
  std::vector<Vec> roots;
  auto add_root = [&](const Vec& u) {
    for (const auto& r : roots)
      if ((r - u).norm() < 1e-6) return;
    roots.push_back(u);
  };
  if (n == 2) {
    const double target = std::atan2(th[1], th[0]);
    std::vector<std::pair<double, double>> pts;  // (phi, wrapped angle difference)
    for (const auto& p : trace.points)
      pts.push_back({std::atan2(p.u[1], p.u[0]), wrap(std::atan2(p.direction[1], p.direction[0]) - target)});
    std::sort(pts.begin(), pts.end());
    auto f = [&](double phi) {
      const auto tp = trace_point(model, patch.side, angle_dir(phi), o);
      return wrap(std::atan2(tp.direction[1], tp.direction[0]) - target);
    };
    for (std::size_t k = 0; k < pts.size(); ++k) {
      auto a = pts[k], b = pts[(k + 1) % pts.size()];
      if (b.first <= a.first) b.first += 2 * std::numbers::pi;
      if (a.second == 0.0) {
        add_root(angle_dir(a.first));
        continue;
      }
      if (a.second * b.second > 0 || std::abs(a.second) > 1.0 || std::abs(b.second) > 1.0) continue;
      std::uintmax_t iters = 100;
      auto tol = [](double l, double h) { return std::abs(h - l) < 1e-13; };
      auto [lo, hi] = boost::math::tools::toms748_solve(f, a.first, b.first, a.second, b.second, tol, iters);
      add_root(angle_dir(0.5 * (lo + hi)));
    }
  } else {
    // Damped Newton on the sphere from the closest trace points.
    const Mat P = impact_basis(th);
    std::vector<std::pair<double, Vec>> starts;
    for (const auto& p : trace.points) starts.push_back({(p.direction - th).norm(), p.u});
    std::sort(starts.begin(), starts.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t si = 0; si < std::min<std::size_t>(starts.size(), 8); ++si) {
      Vec u = starts[si].second;
      bool ok = false;
      for (int it = 0; it < 40; ++it) {
        const auto tp = trace_point(model, patch.side, u, o);
        const Vec r = P.transpose() * tp.direction;
        if (r.norm() < 1e-12 && tp.direction.dot(th) > 0) {
          ok = true;
          break;
        }
        const Mat B = sphere_basis(u);
        Mat J(n - 1, n - 1);
        const double hfd = 1e-6;
        for (int k = 0; k < n - 1; ++k) {
          const auto tk = trace_point(model, patch.side, Vec((u + hfd * B.col(k)).normalized()), o);
          J.col(k) = (P.transpose() * tk.direction - r) / hfd;
        }
        const Vec d = J.colPivHouseholderQr().solve(-r);
        u = (u + B * d).normalized();
      }
      if (ok) add_root(u);
    }
  }
  std::vector<CriticalAction> out;
  for (const auto& u : roots) out.push_back(critical_action_at(model, patch.side, u, o));
  std::sort(out.begin(), out.end(), [](const CriticalAction& a, const CriticalAction& b) {
    return std::make_pair(a.z.norm(), a.S) < std::make_pair(b.z.norm(), b.S);
  });
  return out;
}

void write_patch(const std::string& json_path, const std::string& csv_path, const PotentialModel& model,
                 const ManifoldPatch& patch) {
  const int n = model.dim();
  nlohmann::json j;
  j["side"] = to_string(patch.side);
  j["model_hash"] = patch.model_hash;
  j["model"] = model.spec();
  j["eps"] = patch.eps;
  j["seed_radius"] = patch.seed_radius;
  j["refinement_level"] = patch.refinement_level;
  j["R_patch"] = patch.R_patch;
  j["mesh"] = patch.mesh;
  j["trajectories"] = patch.trajectories;
  j["diagnostics"] = {{"max_energy_error", patch.max_energy_error},
                      {"max_lagrangian_defect", patch.max_lagrangian_defect}};
  nlohmann::json arr = nlohmann::json::array();
  std::vector<std::string> header{"trajectory", "tau"};
  for (int i = 1; i <= n; ++i) header.push_back("x" + std::to_string(i));
  for (int i = 1; i <= n; ++i) header.push_back("xi" + std::to_string(i));
  for (int i = 1; i <= n; ++i) header.push_back("g" + std::to_string(i));
  header.push_back("action");
  header.push_back("g_low_confidence");
  io::CsvTable tab(header);
  for (const auto& s : patch.samples) {
    nlohmann::json e{{"trajectory", s.trajectory}, {"tau", s.tau},     {"x", io::vec_json(s.rho.x)},
                     {"xi", io::vec_json(s.rho.xi)}, {"u", io::vec_json(s.u)}, {"g", io::vec_json(s.g)},
                     {"g_residual", s.g_residual},   {"g_low_confidence", s.g_low_confidence},
                     {"action", s.action}};
    nlohmann::json fr = nlohmann::json::array();
    for (int c = 0; c < s.frame.cols(); ++c) fr.push_back(io::vec_json(s.frame.col(c)));
    e["frame"] = fr;
    arr.push_back(e);
    std::vector<double> row{static_cast<double>(s.trajectory), s.tau};
    for (int i = 0; i < n; ++i) row.push_back(s.rho.x[i]);
    for (int i = 0; i < n; ++i) row.push_back(s.rho.xi[i]);
    for (int i = 0; i < n; ++i) row.push_back(s.g[i]);
    row.push_back(s.action);
    row.push_back(s.g_low_confidence ? 1.0 : 0.0);
    tab.add_numeric_row(row);
  }
  j["samples"] = arr;
  io::atomic_write(json_path, j.dump(1) + "\n");
  io::atomic_write(csv_path, tab.str());
}

}  // namespace critscat
