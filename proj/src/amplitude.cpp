#include "critscat/amplitude.hpp"

#include "critscat/io.hpp"

#include <boost/math/tools/roots.hpp>
#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace critscat {

namespace {

double measure(const Vec& xi, const Mat& Wx) {
  const int n = static_cast<int>(xi.size());
  Mat A(n, n);
  A.col(0) = xi;
  A.rightCols(n - 1) = Wx;
  double scale = xi.norm();
  for (int k = 0; k < Wx.cols(); ++k) scale *= Wx.col(k).norm();
  return scale > 0 ? A.determinant() / scale : 0.0;
}

// Positive roots s of det([xi, Wx + s Wxi]) = 0 on the free tail.
int free_tail_caustics(const Vec& xi, const Mat& Wx, const Mat& Wxi) {
  const int n = static_cast<int>(xi.size());
  if (n < 2) return 0;
  Mat A(n, n), C = Mat::Zero(n, n);
  A.col(0) = xi;
  A.rightCols(n - 1) = Wx;
  C.rightCols(n - 1) = Wxi;
  // det(A + sC) = det(A) det(I + s K), K = A^{-1} C: zeros at s = -1/mu.
  const Mat K = A.partialPivLu().solve(C);
  Eigen::EigenSolver<Mat> es(K);
  int count = 0;
  for (int i = 0; i < n; ++i) {
    const cplx mu = es.eigenvalues()[i];
    if (std::abs(mu.imag()) > 1e-9 * std::abs(mu) || std::abs(mu.real()) < 1e-14) continue;
    if (mu.real() < 0) ++count;
  }
  return count;
}

}  // namespace

Transit compute_transit(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                        const AmplitudeOptions& opts) {
  const int n = model.dim();
  if (omega.size() != n || z.size() != n) throw DimensionError("compute_transit: dimension mismatch");
  if (n < 2) throw DimensionError("compute_transit: impact parameters need n >= 2");
  Transit tr;
  tr.omega = omega;
  tr.z = z;
  tr.E = E;
  tr.basis = impact_basis(omega);
  const auto st = asymptote_start(model, ImpactCoordinates{omega, z, E, Side::incoming}, opts.scatter);
  const double speed = std::sqrt(2 * E);
  const Vec b = speed * omega;

  Mat T0 = Mat::Zero(2 * n, n - 1);
  T0.topRows(n) = tr.basis;
  AugmentedState s0(st.far_point, T0);

  int sign = measure(s0.point.xi, tr.basis) >= 0 ? 1 : -1;
  int changes = 0;
  double min_meas = 1e300;
  auto obs = [&](double, const AugmentedState& s) {
    const double m = measure(s.point.xi, s.tangents.topRows(n));
    min_meas = std::min(min_meas, std::abs(m));
    const int sg = m >= 0 ? 1 : -1;
    if (m != 0.0 && sg != sign) {
      ++changes;
      sign = sg;
    }
    return true;
  };
  const auto run = escape_run(model, s0, st.tau_far, 1.0, opts.scatter, obs);
  tr.out = run.asym;
  const Mat Wx = run.end.tangents.topRows(n), Wxi = run.end.tangents.bottomRows(n);
  tr.dxi_dz = Wxi;
  tr.dx_dz = Wx;
  Mat D(n, n);
  D.col(0) = tr.out.xi_inf;
  D.rightCols(n - 1) = Wxi;
  tr.sigma_hat = std::abs(D.determinant());

  const double end_meas = measure(run.end.point.xi, Wx);
  if (std::abs(end_meas) < 1e-8)
    throw UndecidableError("caustic measure vanishes at the end of the integration window");
  tr.maslov_interior = changes;
  tr.maslov_tail = free_tail_caustics(run.end.point.xi, Wx, Wxi);
  tr.maslov = tr.maslov_interior + tr.maslov_tail;
  tr.min_caustic_measure = min_meas;

  const double pre = free_tail_potential_integral(model, z, b, st.tau_far, -1.0);
  const double post = free_tail_potential_integral(model, tr.out.x_inf, tr.out.xi_inf, run.t_end, 1.0);
  const double proj = tr.out.x_inf.dot(speed * tr.out.Theta);
  tr.action = -2.0 * (run.end.v_integral + pre + post) - proj;
  tr.action_direct =
      run.end.xi2_integral - 2 * E * (run.t_end - st.tau_far) - 2.0 * (pre + post) - proj;
  return tr;
}

SigmaHat sigma_hat(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                   const AmplitudeOptions& opts) {
  const int n = model.dim();
  const auto tr = compute_transit(model, omega, z, E, opts);
  SigmaHat s;
  s.variational = tr.sigma_hat;
  const double h = opts.fd_step * model.length_scale();
  Mat D(n, n);
  D.col(0) = tr.out.xi_inf;
  for (int k = 0; k < n - 1; ++k) {
    const Vec dz = h * tr.basis.col(k);
    const auto p = scattering_data(model, omega, Vec(z + dz), E, opts.scatter);
    const auto m = scattering_data(model, omega, Vec(z - dz), E, opts.scatter);
    D.col(k + 1) = (p.out.xi_inf - m.out.xi_inf) / (2 * h);
  }
  s.finite_difference = std::abs(D.determinant());
  const double ref = std::max(s.variational, s.finite_difference);
  s.relative_gap = ref > 0 ? std::abs(s.variational - s.finite_difference) / ref : 0.0;
  // Near sigma_hat = 0 only an absolute comparison is meaningful.
  const double scale = std::pow(2 * E, 0.5 * n) / std::pow(model.length_scale(), n - 1);
  if (s.relative_gap > opts.consistency_tol && std::abs(s.variational - s.finite_difference) > 1e-6 * scale)
    throw ConsistencyError("sigma_hat: variational and finite-difference values disagree (" +
                           io::fmt(s.variational) + " vs " + io::fmt(s.finite_difference) + ")");
  return s;
}

double modified_action(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                       const AmplitudeOptions& opts) {
  const auto tr = compute_transit(model, omega, z, E, opts);
  const double scale = std::max(1.0, std::abs(tr.action));
  if (std::abs(tr.action - tr.action_direct) > 1e-6 * scale)
    throw PrecisionError("modified action: integrand forms disagree beyond tolerance");
  return tr.action;
}

int maslov_index(const PotentialModel& model, const Vec& omega, const Vec& z, double E, const AmplitudeOptions& opts) {
  return compute_transit(model, omega, z, E, opts).maslov;
}

BranchSearch find_branches(const PotentialModel& model, const Vec& omega, const Vec& theta, double E,
                           const AmplitudeOptions& opts) {
  const int n = model.dim();
  if (omega.size() != n || theta.size() != n) throw DimensionError("find_branches: dimension mismatch");
  if ((omega - theta).norm() < 1e-12) throw PreconditionError("find_branches: theta must differ from omega");
  const int m = n - 1;
  const double speed = std::sqrt(2 * E);
  const double R = opts.R_impact > 0 ? opts.R_impact : 4.0 * model.length_scale();
  const Mat B = impact_basis(omega);
  const Mat P = impact_basis(theta);
  BranchSearch out;

  struct Eval {
    bool ok = false;
    Vec r;
    double along = 0;
    Mat J;
  };
  auto eval = [&](const Vec& s) {
    Eval e;
    try {
      const auto tr = compute_transit(model, omega, Vec(B * s), E, opts);
      e.r = P.transpose() * tr.out.xi_inf / speed;
      e.along = tr.out.xi_inf.dot(theta) / speed;
      e.J = P.transpose() * tr.dxi_dz / speed;
      e.ok = true;
    } catch (const CapturedError&) {
      ++out.captured;
    } catch (const UndecidableError&) {
      // Start sits on a caustic at the window end; nudge by skipping it.
    }
    return e;
  };

  std::vector<Vec> found;
  auto accept = [&](const Vec& s) {
    for (const auto& f : found)
      if ((f - s).norm() < opts.dedup * model.length_scale()) return;
    found.push_back(s);
  };

  // Multistart points: Sobol sequence over the disc (or segment for n = 2).
  boost::random::sobol gen(static_cast<unsigned>(m));
  gen.seed(opts.seed + 1);
  const double denom = static_cast<double>(gen.max()) + 1.0;
  std::vector<Vec> starts;
  while (static_cast<int>(starts.size()) < opts.starts) {
    Vec s(m);
    for (int i = 0; i < m; ++i) s[i] = R * (2.0 * (static_cast<double>(gen()) / denom) - 1.0);
    if (m > 1 && s.norm() > R) continue;
    starts.push_back(s);
  }
  out.starts = static_cast<int>(starts.size());

  std::vector<std::pair<double, Eval>> scan;
  for (const auto& s0 : starts) {
    Vec s = s0;
    Eval e = eval(s);
    if (m == 1 && e.ok) scan.push_back({s[0], e});
    bool conv = false;
    for (int it = 0; it < opts.newton_iters && e.ok; ++it) {
      if (e.r.norm() < 1e-13 && e.along > 0) {
        conv = true;
        break;
      }
      Vec d = e.J.colPivHouseholderQr().solve(-e.r);
      if (!d.allFinite()) break;
      const double lim = 0.25 * R;
      if (d.norm() > lim) d *= lim / d.norm();
      // Damped step: accept the first halving that reduces the residual.
      bool moved = false;
      for (int ls = 0; ls < 20; ++ls) {
        const Vec sn = s + d;
        if (sn.norm() > 1.5 * R) {
          d *= 0.5;
          continue;
        }
        Eval en = eval(sn);
        if (en.ok && en.r.norm() < e.r.norm()) {
          s = sn;
          e = std::move(en);
          moved = true;
          break;
        }
        d *= 0.5;
      }
      if (!moved) break;
    }
    if (conv) {
      ++out.converged;
      accept(s);
    }
  }
  if (m == 1) {
    // Bracketed refinement between adjacent scan points catches roots that
    // Newton skipped over.
    std::sort(scan.begin(), scan.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t k = 0; k + 1 < scan.size(); ++k) {
      const auto& a = scan[k];
      const auto& b = scan[k + 1];
      if (a.second.along <= 0 || b.second.along <= 0) continue;
      const double fa = a.second.r[0], fb = b.second.r[0];
      if (fa * fb > 0) continue;
      auto f = [&](double x) {
        Vec s(1);
        s[0] = x;
        const auto e = eval(s);
        if (!e.ok) throw NoAsymptoteError("bracket evaluation failed");
        return e.r[0];
      };
      try {
        std::uintmax_t iters = 200;
        auto tol = [](double l, double h) { return std::abs(h - l) < 1e-14; };
        auto [lo, hi] = boost::math::tools::toms748_solve(f, a.first, b.first, fa, fb, tol, iters);
        Vec s(1);
        s[0] = 0.5 * (lo + hi);
        accept(s);
      } catch (const Error&) {
      }
    }
  }

  for (const auto& s : found) {
    const Vec z = B * s;
    Transit tr;
    try {
      tr = compute_transit(model, omega, z, E, opts);
    } catch (const Error& e) {
      out.warnings.push_back(std::string("branch recomputation failed: ") + e.what());
      continue;
    }
    ScatteringBranch br;
    br.z = z;
    br.theta = tr.out.Theta;
    br.residual = (tr.out.xi_inf - speed * theta).norm() / speed;
    if (br.residual > opts.branch_tol) continue;
    br.sigma_hat = tr.sigma_hat;
    br.action = tr.action;
    br.maslov = tr.maslov;
    br.on_boundary = s.norm() > 0.99 * R;
    if (br.on_boundary) out.warnings.push_back("branch on the search boundary at |z| = " + io::fmt(z.norm()));
    if (opts.check_fd) {
      try {
        br.sigma_hat_fd = sigma_hat(model, omega, z, E, opts).finite_difference;
      } catch (const ConsistencyError& e) {
        out.warnings.push_back(e.what());
      }
    }
    out.branches.push_back(br);
  }
  std::sort(out.branches.begin(), out.branches.end(), [](const ScatteringBranch& a, const ScatteringBranch& b) {
    const double na = a.z.norm(), nb = b.z.norm();
    if (std::abs(na - nb) > 1e-12) return na < nb;
    return std::lexicographical_compare(a.z.data(), a.z.data() + a.z.size(), b.z.data(), b.z.data() + b.z.size());
  });
  for (std::size_t j = 0; j < out.branches.size(); ++j) out.branches[j].index = static_cast<int>(j);
  return out;
}

cplx assemble(const std::vector<ScatteringBranch>& branches, double h) {
  cplx A{0.0, 0.0};
  for (const auto& b : branches)
    A += std::pow(b.sigma_hat, -0.5) * std::exp(cplx(0.0, b.action / h - b.maslov * std::numbers::pi / 2));
  return A;
}

AmplitudeResult semiclassical_leading_amplitude(const PotentialModel& model, const Vec& omega, const Vec& theta,
                                                double E, double h, const AmplitudeOptions& opts) {
  if (!(h > 0)) throw PreconditionError("amplitude: h must be positive");
  AmplitudeResult r;
  r.h = h;
  r.E = E;
  r.omega = omega;
  r.theta = theta;
  auto search = find_branches(model, omega, theta, E, opts);
  r.warnings = search.warnings;
  for (const auto& b : search.branches)
    if (b.sigma_hat <= opts.sigma_floor)
      throw DegenerateDirectionError("theta is not omega-regular: a branch has sigma_hat below the floor");
  r.branches = std::move(search.branches);
  r.value = assemble(r.branches, h);
  if (r.branches.empty()) r.status = search.converged == 0 && search.captured > 0 ? "no-branches-captured" : "ok";
  if (!r.warnings.empty()) r.status = "ok-with-warnings";
  return r;
}

nlohmann::json to_json(const AmplitudeResult& r) {
  nlohmann::json br = nlohmann::json::array();
  for (const auto& b : r.branches)
    br.push_back({{"z", io::vec_json(b.z)},
                  {"sigma_hat", b.sigma_hat},
                  {"sigma_hat_fd", b.sigma_hat_fd},
                  {"action", b.action},
                  {"maslov", b.maslov},
                  {"residual", b.residual}});
  return {{"omega", io::vec_json(r.omega)}, {"theta", io::vec_json(r.theta)},
          {"E", r.E},
          {"h", r.h},
          {"branches", br},
          {"amplitude", {{"re", r.value.real()}, {"im", r.value.imag()}}},
          {"status", r.status},
          {"warnings", r.warnings},
          {"convention", r.convention}};
}

std::vector<RelationRow> scattering_relation_table(const PotentialModel& model, double E,
                                                   const std::vector<std::pair<Vec, Vec>>& grid,
                                                   const AmplitudeOptions& opts) {
  const double speed = std::sqrt(2 * E);
  std::vector<RelationRow> rows;
  for (const auto& [omega, z] : grid) {
    RelationRow row;
    row.omega = omega;
    row.eta_minus = -speed * z;
    try {
      const auto d = scattering_data(model, omega, z, E, opts.scatter);
      row.theta = d.theta;
      row.eta_plus = -speed * d.z_plus;
      row.status = "ok";
    } catch (const CapturedError&) {
      row.status = "captured";
    } catch (const Error& e) {
      row.status = e.kind();
    }
    if (row.status != "ok") {
      row.theta = Vec::Constant(omega.size(), std::numeric_limits<double>::quiet_NaN());
      row.eta_plus = row.theta;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

CriticalOrderData critical_order_exponents(const std::vector<double>& lambda) {
  if (lambda.empty()) throw PreconditionError("critical_order_exponents: empty lambda list");
  const double l1 = *std::min_element(lambda.begin(), lambda.end());
  if (!(l1 > 0)) throw PreconditionError("critical_order_exponents: lambda must be positive");
  double sum = 0;
  for (double l : lambda) sum += l;
  CriticalOrderData d;
  d.lambda = lambda;
  d.resolvent_order = 1.0 - sum / (2 * l1);
  d.scattering_order = 0.5 - sum / (2 * l1);
  return d;
}

CriticalOrderData critical_order_exponents(const PotentialModel& model) {
  const auto lin = linearization(model);
  return critical_order_exponents(std::vector<double>(lin.lambda.data(), lin.lambda.data() + lin.lambda.size()));
}

CriticalOrderExact critical_order_exponents_exact(const std::vector<Rational>& lambda) {
  if (lambda.empty()) throw PreconditionError("critical_order_exponents: empty lambda list");
  const Rational l1 = *std::min_element(lambda.begin(), lambda.end());
  if (l1 <= 0) throw PreconditionError("critical_order_exponents: lambda must be positive");
  Rational sum = 0;
  for (const auto& l : lambda) sum += l;
  const Rational q = sum / (2 * l1);
  return {Rational(1) - q, Rational(1, 2) - q};
}

}  // namespace critscat
