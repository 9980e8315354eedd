#include "critscat/quantum.hpp"

#include "critscat/io.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/bessel_prime.hpp>
#include <boost/numeric/odeint.hpp>
#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace critscat {

namespace {

constexpr double kPi = std::numbers::pi;

// Smallest L such that |V| < cut at +-x for x >= L along axis e1 (sampled).
double negligible_radius(const PotentialModel& model, double cut) {
  const double ell = model.length_scale();
  const double step = 0.02 * ell;
  const double limit = 1e4 * ell;
  Vec x = Vec::Zero(model.dim());
  double last_bad = 0.0;
  // Scan far enough past the last offending point to be confident the tail
  // stays below the cut (monotone tails for all bundled families).
  for (double r = 0.0; r <= limit; r += step) {
    x[0] = r;
    const double a = std::abs(model.value(x));
    x[0] = -r;
    const double b = std::abs(model.value(x));
    if (a >= cut || b >= cut) last_bad = r;
    if (r > last_bad + 4 * ell && r > 2 * ell) return last_bad + step;
  }
  throw PreconditionError("potential does not fall below " + io::fmt(cut) + " within 1e4 length scales");
}

// RAII FFTW plan for an in-place transform of a complex buffer.
class FftPlan {
 public:
  FftPlan(const std::vector<int>& dims, cplx* data, int sign) {
    plan_ = fftw_plan_dft(static_cast<int>(dims.size()), dims.data(), reinterpret_cast<fftw_complex*>(data),
                          reinterpret_cast<fftw_complex*>(data), sign, FFTW_ESTIMATE);
    if (!plan_) throw GridError("FFTW plan creation failed");
  }
  ~FftPlan() { fftw_destroy_plan(plan_); }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  void run(cplx* data) const {
    fftw_execute_dft(plan_, reinterpret_cast<fftw_complex*>(data), reinterpret_cast<fftw_complex*>(data));
  }

 private:
  fftw_plan plan_ = nullptr;
};

double k_squared(const GridSpec& g, std::size_t flat) {
  double k2 = 0.0;
  std::size_t rem = flat;
  for (int a = g.dim() - 1; a >= 0; --a) {
    const int i = static_cast<int>(rem % g.N[a]);
    rem /= g.N[a];
    const double k = g.wavenumber(a, i);
    k2 += k * k;
  }
  return k2;
}

}  // namespace

// ---------------------------------------------------------------- 1D Numerov

namespace {

struct NumerovRun {
  cplx T, R;
  double L;
  std::size_t points;
};

NumerovRun numerov_once(const PotentialModel& model, double E, double h, double L, double ppw) {
  // Largest local wavenumber sets the step.
  double vmin = 0.0;
  Vec x(1);
  for (int i = 0; i <= 4000; ++i) {
    x[0] = -L + 2 * L * i / 4000.0;
    vmin = std::min(vmin, model.value(x));
  }
  const double kmax = std::sqrt(2 * (E - vmin)) / h;
  const double k = std::sqrt(2 * E) / h;
  const auto N = static_cast<std::size_t>(std::ceil(2 * L * kmax * ppw / (2 * kPi)));
  const double d = 2 * L / static_cast<double>(N);
  auto q = [&](std::size_t i) {
    x[0] = -L + d * static_cast<double>(i);
    return 2 * (E - model.value(x)) / (h * h);
  };
  // Exact discrete dispersion of the free Numerov recursion.
  const double c = d * d * k * k / 12.0;
  const double kappa = std::acos((1 - 5 * c) / (1 + c)) / d;
  const cplx I(0.0, 1.0);

  // Purely transmitted wave on the right, integrate leftwards.
  cplx p_next = std::exp(I * kappa * L);              // i = N
  cplx p_cur = std::exp(I * kappa * (L - d));         // i = N - 1
  double w_next = 1 + d * d * q(N) / 12.0;
  double w_cur = 1 + d * d * q(N - 1) / 12.0;
  for (std::size_t i = N - 1; i >= 1; --i) {
    const double w_prev = 1 + d * d * q(i - 1) / 12.0;
    const double f_cur = 2 - 10 * (w_cur - 1);  // 2 (1 - 5 d^2 q / 12)
    const cplx p_prev = (f_cur * p_cur - w_next * p_next) / w_prev;
    p_next = p_cur;
    p_cur = p_prev;
    w_next = w_cur;
    w_cur = w_prev;
  }
  // p_cur at x0 = -L, p_next at x1 = -L + d.
  const double x0 = -L, x1 = -L + d;
  const cplx e0 = std::exp(I * kappa * x0), e1 = std::exp(I * kappa * x1);
  const cplx det = e0 / e1 - e1 / e0;
  const cplx A = (p_cur / e1 - p_next / e0) / det;
  const cplx B = (e0 * p_next - e1 * p_cur) / det;
  return {1.0 / A, B / A, L, N + 1};
}

}  // namespace

Transmission1D numerov_scattering_1d(const PotentialModel& model, double E, double h, const NumerovOptions& opts) {
  if (model.dim() != 1) throw DimensionError("numerov_scattering_1d needs a 1D model");
  if (!(E > 0) || !(h > 0)) throw PreconditionError("numerov_scattering_1d needs E > 0 and h > 0");
  const double L = negligible_radius(model, opts.v_cut * E);
  const NumerovRun a = numerov_once(model, E, h, L, opts.points_per_wavelength);
  Transmission1D out;
  out.T = a.T;
  out.R = a.R;
  out.L = L;
  out.points = a.points;
  out.unitarity_defect = std::abs(std::norm(a.T) + std::norm(a.R) - 1.0);
  if (!(out.unitarity_defect <= opts.unitarity_tol))
    throw ResolutionError("Numerov unitarity defect " + io::fmt(out.unitarity_defect));
  if (opts.check_convergence) {
    const NumerovRun b = numerov_once(model, E, h, L, 2 * opts.points_per_wavelength);
    out.convergence = std::abs(std::norm(b.T) - std::norm(a.T));
  }
  return out;
}

double barrier_top_transmission(double E1, double lambda) { return 1.0 / (1.0 + std::exp(-2 * kPi * E1 / lambda)); }

// ------------------------------------------------------ 2D radial partial waves

double radial_phase_shift(const PotentialModel& model, int m, double E, double h, double r_match, double rel_tol) {
  m = std::abs(m);
  const double k = std::sqrt(2 * E) / h;
  const double nu2 = static_cast<double>(m) * m - 0.25;
  Vec x = Vec::Zero(model.dim());
  auto U = [&](double r) {
    x[0] = r;
    return 2 * model.value(x) / (h * h);
  };

  // Start deep inside the centrifugal region, where any admixture of the
  // irregular solution decays relative to the regular one.
  double r_s;
  if (m == 0) {
    r_s = 1e-8 / k;
  } else {
    r_s = (m / k) * std::exp(-40.0 / (m + 0.5));
    if (r_s >= r_match) return 0.0;
    r_s = std::max(r_s, 1e-8 / k);
  }
  const double q02 = k * k - U(0.0);
  using State = std::array<double, 2>;
  State y{1.0, (m + 0.5) / r_s - q02 * r_s / (2.0 * (m + 1))};
  auto rhs = [&](const State& s, State& ds, double r) {
    ds[0] = s[1];
    ds[1] = (U(r) + nu2 / (r * r) - k * k) * s[0];
  };
  namespace ode = boost::numeric::odeint;
  auto stepper = ode::make_controlled(1e-300, rel_tol, ode::runge_kutta_fehlberg78<State>());
  ode::integrate_adaptive(stepper, rhs, y, r_s, r_match, 1e-3 * r_s);

  const double r = r_match, kr = k * r, sr = std::sqrt(r);
  using boost::math::cyl_bessel_j;
  using boost::math::cyl_bessel_j_prime;
  using boost::math::cyl_neumann;
  using boost::math::cyl_neumann_prime;
  double J, Y, Jp, Yp;
  try {
    J = cyl_bessel_j(m, kr);
    Y = cyl_neumann(m, kr);
    Jp = cyl_bessel_j_prime(m, kr);
    Yp = cyl_neumann_prime(m, kr);
  } catch (const std::overflow_error&) {
    return 0.0;  // matching point deep in the centrifugal region
  }
  const double uJ = sr * J, uY = sr * Y;
  const double dJ = J / (2 * sr) + k * sr * Jp;
  const double dY = Y / (2 * sr) + k * sr * Yp;
  if (!std::isfinite(uY) || !std::isfinite(dY)) return 0.0;
  // u = A uJ + B uY, u' = A dJ + B dY; tan delta = -B / A.
  const double A = y[0] * dY - y[1] * uY;
  const double B = y[1] * uJ - y[0] * dJ;
  return std::atan(-B / A);
}

PartialWaveResult partial_wave_amplitude(const PotentialModel& model, double E, double h,
                                         const std::vector<double>& theta, const PartialWaveOptions& opts) {
  if (model.dim() != 2) throw DimensionError("partial waves are implemented for n = 2");
  if (!model.radial()) throw PreconditionError("partial waves need a radial model");
  if (!(E > 0) || !(h > 0)) throw PreconditionError("partial_wave_amplitude needs E > 0 and h > 0");
  PartialWaveResult out;
  out.k = std::sqrt(2 * E) / h;
  out.r_match = negligible_radius(model, opts.v_cut * E);
  out.theta = theta;

  int quiet = 0, m = 0;
  for (; m <= opts.m_max; ++m) {
    const double d = radial_phase_shift(model, m, E, h, out.r_match, opts.rel_tol);
    out.delta.push_back(d);
    quiet = std::abs(d) < opts.delta_cut ? quiet + 1 : 0;
    if (quiet >= opts.consecutive && m > 2) break;
  }
  if (m > opts.m_max) throw TruncationError("phase shifts still above cutoff at m_max = " + std::to_string(opts.m_max));
  out.m_cut = m;

  const cplx pref = std::sqrt(2.0 / (kPi * out.k)) * std::exp(cplx(0.0, kPi / 4));
  auto assemble = [&](const std::vector<double>& delta, double th) {
    cplx s = std::exp(cplx(0.0, delta[0])) * std::sin(delta[0]);
    for (std::size_t j = 1; j < delta.size(); ++j)
      s += 2.0 * std::exp(cplx(0.0, delta[j])) * std::sin(delta[j]) * std::cos(static_cast<double>(j) * th);
    return pref * s;
  };
  for (double th : theta) out.f.push_back(assemble(out.delta, th));

  double s2 = std::norm(std::sin(out.delta[0]));
  for (std::size_t j = 1; j < out.delta.size(); ++j) s2 += 2 * std::norm(std::sin(out.delta[j]));
  out.sigma_total = 4.0 / out.k * s2;
  const cplx f0 = assemble(out.delta, 0.0);
  const double optical = std::sqrt(8 * kPi / out.k) * (std::exp(cplx(0.0, -kPi / 4)) * f0).imag();
  out.optical_defect = std::abs(optical - out.sigma_total) / std::max(out.sigma_total, 1e-300);

  if (opts.check_doubling) {
    std::vector<double> ext = out.delta;
    for (int j = m + 1; j <= 2 * m; ++j) ext.push_back(radial_phase_shift(model, j, E, h, out.r_match, opts.rel_tol));
    for (std::size_t i = 0; i < theta.size(); ++i)
      out.truncation_change = std::max(out.truncation_change, std::abs(assemble(ext, theta[i]) - out.f[i]));
  }
  return out;
}

cplx born_amplitude_2d(const PotentialModel& model, double E, double h, double theta) {
  if (model.dim() != 2 || !model.radial()) throw PreconditionError("born_amplitude_2d needs a radial 2D model");
  const double k = std::sqrt(2 * E) / h;
  const double q = 2 * k * std::abs(std::sin(theta / 2));
  const double R = negligible_radius(model, 1e-14 * E);
  Vec x = Vec::Zero(2);
  auto integrand = [&](double r) {
    x[0] = r;
    return model.value(x) * boost::math::cyl_bessel_j(0, q * r) * r;
  };
  // Panels of about half a Bessel period keep the Kronrod rule well inside
  // its comfortable oscillation count.
  const int panels = std::max(8, static_cast<int>(std::ceil(R * (q + 1.0) / kPi)));
  double I = 0.0;
  for (int p = 0; p < panels; ++p)
    I += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, R * p / panels, R * (p + 1) / panels,
                                                                        0, 1e-13);
  return -std::sqrt(2.0 / (kPi * k)) * std::exp(cplx(0.0, kPi / 4)) * (kPi / (h * h)) * I;
}

// ------------------------------------------------------------- grid states

std::size_t GridSpec::size() const {
  std::size_t s = 1;
  for (int n : N) s *= static_cast<std::size_t>(n);
  return s;
}

double GridSpec::cell() const {
  double c = 1.0;
  for (int a = 0; a < dim(); ++a) c *= dx(a);
  return c;
}

double GridSpec::wavenumber(int a, int i) const {
  const int j = i < N[a] / 2 ? i : i - N[a];
  return 2 * kPi * j / (N[a] * dx(a));
}

Vec GridSpec::point(std::size_t flat) const {
  Vec p(dim());
  for (int a = dim() - 1; a >= 0; --a) {
    p[a] = coord(a, static_cast<int>(flat % N[a]));
    flat /= N[a];
  }
  return p;
}

GridSpec make_grid(std::vector<int> N, std::vector<double> lo, std::vector<double> hi) {
  if (N.empty() || N.size() > 2 || lo.size() != N.size() || hi.size() != N.size())
    throw GridError("grids are 1D or 2D with matching extents");
  for (std::size_t a = 0; a < N.size(); ++a)
    if (N[a] < 8 || !(hi[a] > lo[a])) throw GridError("grid axis needs >= 8 points and hi > lo");
  return {std::move(N), std::move(lo), std::move(hi)};
}

double GridState::norm2() const {
  double s = 0.0;
  for (const cplx& v : psi) s += std::norm(v);
  return s * grid.cell();
}

void check_resolution(const GridSpec& grid, double h, double xi_max) {
  for (int a = 0; a < grid.dim(); ++a)
    if (grid.dx(a) > h / (4 * xi_max))
      throw GridError("grid spacing " + io::fmt(grid.dx(a)) + " exceeds h/(4 xi_max) = " + io::fmt(h / (4 * xi_max)));
}

GridState coherent_state(const Vec& x0, const Vec& xi0, double h, const GridSpec& grid) {
  const int n = grid.dim();
  if (x0.size() != n || xi0.size() != n) throw DimensionError("coherent_state: center dimension differs from grid");
  const double spread = 8 * std::sqrt(h / 2);
  for (int a = 0; a < n; ++a) {
    if (std::abs(xi0[a]) + spread > kPi * h / grid.dx(a))
      throw GridError("coherent state momentum beyond the Nyquist limit of the grid");
    if (x0[a] - spread < grid.lo[a] || x0[a] + spread > grid.hi[a])
      throw GridError("coherent state does not fit inside the grid");
  }
  GridState s;
  s.grid = grid;
  s.h = h;
  s.psi.resize(grid.size());
  const double c = std::pow(kPi * h, -0.25 * n);
  for (std::size_t i = 0; i < s.psi.size(); ++i) {
    const Vec d = grid.point(i) - x0;
    s.psi[i] = c * std::exp(cplx(-d.squaredNorm() / (2 * h), xi0.dot(d) / h));
  }
  return s;
}

PhasePoint centroid(const GridState& s) {
  const int n = s.grid.dim();
  Vec x = Vec::Zero(n), xi = Vec::Zero(n);
  double m = 0.0;
  for (std::size_t i = 0; i < s.psi.size(); ++i) {
    const double w = std::norm(s.psi[i]);
    x += w * s.grid.point(i);
    m += w;
  }
  x /= m;
  std::vector<cplx> buf = s.psi;
  FftPlan plan(s.grid.N, buf.data(), FFTW_FORWARD);
  plan.run(buf.data());
  double mk = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double w = std::norm(buf[i]);
    std::size_t rem = i;
    for (int a = n - 1; a >= 0; --a) {
      xi[a] += w * s.h * s.grid.wavenumber(a, static_cast<int>(rem % s.grid.N[a]));
      rem /= s.grid.N[a];
    }
    mk += w;
  }
  xi /= mk;
  return {x, xi};
}

double fidelity(const GridState& a, const GridState& b) {
  if (a.psi.size() != b.psi.size()) throw DimensionError("fidelity: grids differ");
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.psi.size(); ++i) s += std::conj(a.psi[i]) * b.psi[i];
  return std::norm(s * a.grid.cell());
}

namespace {

GridState propagate_impl(const GridState& s0, const PotentialModel& model, double t, double dt_target,
                         const PropagationOptions& opts, PropagationReport& rep, bool callbacks) {
  const GridSpec& g = s0.grid;
  const std::size_t N = g.size();
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(std::abs(t) / dt_target - 1e-9)));
  const double dt = t / static_cast<double>(steps);
  const double h = s0.h;

  std::vector<cplx> vhalf(N), kin(N);
  std::vector<double> mask;
  for (std::size_t i = 0; i < N; ++i) {
    vhalf[i] = std::exp(cplx(0.0, -model.value(g.point(i)) * dt / (2 * h)));
    kin[i] = std::exp(cplx(0.0, -dt * h * k_squared(g, i) / 2)) / static_cast<double>(N);
  }
  if (opts.absorb_width > 0) {
    mask.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      const Vec p = g.point(i);
      double gamma = 0.0;
      for (int a = 0; a < g.dim(); ++a) {
        const double d = std::min(p[a] - g.lo[a], g.hi[a] - p[a]);
        const double r = std::max(0.0, 1.0 - d / opts.absorb_width);
        gamma += opts.absorb_strength * r * r;
      }
      mask[i] = std::exp(-gamma * std::abs(dt));
    }
  }

  GridState s = s0;
  const double m0 = s0.norm2();
  FftPlan fwd(g.N, s.psi.data(), FFTW_FORWARD);
  FftPlan bwd(g.N, s.psi.data(), FFTW_BACKWARD);
  double absorbed = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t i = 0; i < N; ++i) s.psi[i] *= vhalf[i];
    fwd.run(s.psi.data());
    for (std::size_t i = 0; i < N; ++i) s.psi[i] *= kin[i];
    bwd.run(s.psi.data());
    for (std::size_t i = 0; i < N; ++i) s.psi[i] *= vhalf[i];
    if (!mask.empty()) {
      double removed = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double before = std::norm(s.psi[i]);
        s.psi[i] *= mask[i];
        removed += before - std::norm(s.psi[i]);
      }
      absorbed += removed * g.cell();
      s.absorbed = s0.absorbed + absorbed;
    }
    s.t += dt;
    if (callbacks && opts.on_step) opts.on_step(s);
  }
  s.absorbed = s0.absorbed + absorbed;
  rep.steps = steps;
  rep.norm_drift = std::abs(s.norm2() + absorbed - m0) / m0;
  return s;
}

}  // namespace

GridState propagate(const GridState& s, const PotentialModel& model, double t, const PropagationOptions& opts,
                    PropagationReport* report) {
  if (model.dim() != s.grid.dim()) throw DimensionError("propagate: model and grid dimensions differ");
  if (!(opts.dt > 0)) throw PreconditionError("propagate: dt must be positive");
  PropagationReport rep;
  GridState out = propagate_impl(s, model, t, opts.dt, opts, rep, true);
  if (rep.norm_drift > opts.norm_tol)
    throw StepSizeError("split-step mass balance drifted by " + io::fmt(rep.norm_drift));
  if (opts.check_halving) {
    PropagationReport r2;
    const GridState half = propagate_impl(s, model, t, opts.dt / 2, opts, r2, false);
    double d = 0.0;
    for (std::size_t i = 0; i < out.psi.size(); ++i) d += std::norm(out.psi[i] - half.psi[i]);
    rep.halving_change = std::sqrt(d * s.grid.cell());
  }
  if (report) *report = rep;
  return out;
}

void write_snapshot(const std::string& path, const GridState& s) {
  static_assert(std::endian::native == std::endian::little, "snapshot writer assumes a little-endian host");
  std::string buf = "SCGS";
  auto put = [&buf](const auto& v) { buf.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(std::uint32_t{1});
  put(static_cast<std::uint32_t>(s.grid.dim()));
  for (int n : s.grid.N) put(static_cast<std::uint64_t>(n));
  for (double v : s.grid.lo) put(v);
  for (double v : s.grid.hi) put(v);
  put(s.h);
  put(s.t);
  buf.append(reinterpret_cast<const char*>(s.psi.data()), s.psi.size() * sizeof(cplx));
  io::atomic_write(path, buf);
}

GridState read_snapshot(const std::string& path) {
  const std::string buf = io::read_text(path);
  std::size_t pos = 0;
  auto get = [&](auto& v) {
    if (pos + sizeof v > buf.size()) throw GridError("truncated snapshot " + path);
    std::memcpy(&v, buf.data() + pos, sizeof v);
    pos += sizeof v;
  };
  if (buf.compare(0, 4, "SCGS") != 0) throw GridError("not a snapshot file: " + path);
  pos = 4;
  std::uint32_t version = 0, n = 0;
  get(version);
  get(n);
  if (version != 1 || n < 1 || n > 2) throw GridError("unsupported snapshot layout in " + path);
  std::vector<int> N(n);
  std::vector<double> lo(n), hi(n);
  for (auto& v : N) {
    std::uint64_t u = 0;
    get(u);
    v = static_cast<int>(u);
  }
  for (auto& v : lo) get(v);
  for (auto& v : hi) get(v);
  GridState s;
  s.grid = make_grid(N, lo, hi);
  get(s.h);
  get(s.t);
  if (buf.size() - pos != s.grid.size() * sizeof(cplx)) throw GridError("snapshot payload size mismatch in " + path);
  s.psi.resize(s.grid.size());
  std::memcpy(s.psi.data(), buf.data() + pos, buf.size() - pos);
  return s;
}

// --------------------------------------------------------------- Husimi

namespace {

struct MomentumNodes {
  int n = 0;
  int K = 0;          // nodes per axis
  double xi0 = 0.0;   // first node
  double dxi = 0.0;
  std::vector<int> fft_index;  // per-axis FFT bin of node j
};

using NodeVisitor = std::function<void(const Vec& x, const MomentumNodes& nodes, const std::vector<double>& Q)>;

double visit_impl(const GridState& s, const HusimiWindow& w, const NodeVisitor& visit) {
  const GridSpec& g = s.grid;
  const int n = g.dim();
  const double h = s.h;
  if (w.x_lo.size() != n || w.x_hi.size() != n) throw DimensionError("Husimi window dimension differs from grid");
  const double sh = std::sqrt(h);
  const double step = w.x_step > 0 ? w.x_step : sh / 2;
  const double W = w.half_width * sh;

  // Subsampled local box, fine enough that content up to xi_max cannot alias
  // onto the evaluated nodes.
  const double dy_target = 2 * kPi * h / (2 * w.xi_max + 10 * sh);
  std::vector<int> sub(n);
  int M = 8;
  double dy_max = 0.0;
  for (int a = 0; a < n; ++a) {
    if (g.dx(a) > dy_target) throw ResolutionError("grid too coarse for Husimi momenta up to xi_max");
    sub[a] = std::max(1, static_cast<int>(std::floor(dy_target / g.dx(a))));
    dy_max = std::max(dy_max, sub[a] * g.dx(a));
  }
  while (M * dy_max < 2 * W) M *= 2;
  for (int a = 0; a < n; ++a)
    if (M * sub[a] > g.N[a]) throw ResolutionError("Husimi window wider than the grid");
  // All axes share one subsampling so the momentum nodes are common.
  for (int a = 1; a < n; ++a)
    if (std::abs(sub[a] * g.dx(a) - sub[0] * g.dx(0)) > 1e-12 * g.dx(0))
      throw ResolutionError("Husimi windows need equal spacing on every axis");
  const double dy = sub[0] * g.dx(0);
  const double dxi = 2 * kPi * h / (M * dy);

  MomentumNodes nodes;
  nodes.n = n;
  nodes.dxi = dxi;
  const int jmax = std::min(M / 2 - 1, static_cast<int>(std::floor(w.xi_max / dxi)));
  nodes.K = 2 * jmax + 1;
  nodes.xi0 = -jmax * dxi;
  for (int j = -jmax; j <= jmax; ++j) nodes.fft_index.push_back(j >= 0 ? j : j + M);

  std::vector<int> dims(n, M);
  std::size_t box = 1;
  for (int a = 0; a < n; ++a) box *= M;
  std::vector<cplx> buf(box);
  FftPlan plan(dims, buf.data(), FFTW_FORWARD);
  const double qscale = std::pow(kPi * h, -0.5 * n) * std::pow(dy, 2.0 * n) / std::pow(2 * kPi * h, n);
  const double weight = std::pow(step, n) * std::pow(dxi, n);
  const double total2 = s.norm2();

  std::vector<int> count(n);
  for (int a = 0; a < n; ++a) count[a] = static_cast<int>(std::floor((w.x_hi[a] - w.x_lo[a]) / step + 1e-9)) + 1;
  std::size_t centers = 1;
  for (int c : count) centers *= c;

  std::vector<double> Q(static_cast<std::size_t>(std::pow(nodes.K, n)));
  std::vector<std::vector<double>> win(n, std::vector<double>(M));
  std::vector<std::vector<int>> idx(n, std::vector<int>(M));
  Vec x(n);
  for (std::size_t c = 0; c < centers; ++c) {
    std::size_t rem = c;
    for (int a = n - 1; a >= 0; --a) {
      x[a] = w.x_lo[a] + step * static_cast<double>(rem % count[a]);
      rem /= count[a];
    }
    for (int a = 0; a < n; ++a) {
      const int i0 = static_cast<int>(std::lround((x[a] - g.lo[a]) / g.dx(a)));
      for (int j = 0; j < M; ++j) {
        const int off = sub[a] * (j - M / 2);
        const double y = g.lo[a] + (i0 + off) * g.dx(a);
        win[a][j] = std::exp(-(y - x[a]) * (y - x[a]) / (2 * h));
        idx[a][j] = ((i0 + off) % g.N[a] + g.N[a]) % g.N[a];
      }
    }
    double local = 0.0;
    if (n == 1) {
      for (int j = 0; j < M; ++j) buf[j] = s.psi[idx[0][j]] * win[0][j];
    } else {
      for (int j0 = 0; j0 < M; ++j0)
        for (int j1 = 0; j1 < M; ++j1)
          buf[static_cast<std::size_t>(j0) * M + j1] =
              s.psi[static_cast<std::size_t>(idx[0][j0]) * g.N[1] + idx[1][j1]] * (win[0][j0] * win[1][j1]);
    }
    for (const cplx& v : buf) local += std::norm(v);
    if (local * std::pow(dy, n) < 1e-18 * total2) continue;
    plan.run(buf.data());
    if (n == 1) {
      for (int j = 0; j < nodes.K; ++j) Q[j] = qscale * std::norm(buf[nodes.fft_index[j]]);
    } else {
      for (int j0 = 0; j0 < nodes.K; ++j0)
        for (int j1 = 0; j1 < nodes.K; ++j1)
          Q[static_cast<std::size_t>(j0) * nodes.K + j1] =
              qscale * std::norm(buf[static_cast<std::size_t>(nodes.fft_index[j0]) * M + nodes.fft_index[j1]]);
    }
    visit(x, nodes, Q);
  }
  return weight;
}

std::vector<Vec> node_list(const MomentumNodes& nodes) {
  std::vector<Vec> out;
  const int n = nodes.n, K = nodes.K;
  const std::size_t total = static_cast<std::size_t>(std::pow(K, n));
  out.reserve(total);
  for (std::size_t j = 0; j < total; ++j) {
    Vec v(n);
    std::size_t rem = j;
    for (int a = n - 1; a >= 0; --a) {
      v[a] = nodes.xi0 + nodes.dxi * static_cast<double>(rem % K);
      rem /= K;
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

double HusimiField::total() const {
  double s = 0.0;
  for (const auto& row : values)
    for (double q : row) s += q;
  return s * weight;
}

double husimi_visit(const GridState& s, const HusimiWindow& w, const HusimiVisitor& visit) {
  std::vector<Vec> xi;
  return visit_impl(s, w, [&](const Vec& x, const MomentumNodes& nodes, const std::vector<double>& Q) {
    if (xi.empty()) xi = node_list(nodes);
    visit(x, xi, Q);
  });
}

HusimiField husimi_wavefront(const GridState& s, const HusimiWindow& w) {
  HusimiField f;
  f.h = s.h;
  f.weight = husimi_visit(s, w, [&f](const Vec& x, const std::vector<Vec>& xi, const std::vector<double>& Q) {
    if (f.xi.empty()) f.xi = xi;
    f.centers.push_back(x);
    f.values.push_back(Q);
  });
  return f;
}

MassNear mass_near(const GridState& s, const std::vector<PhasePoint>& targets, double delta, const HusimiWindow& w,
                   double r_min) {
  MassNear out;
  std::vector<char> mark;
  std::vector<const PhasePoint*> local;
  const double weight = visit_impl(s, w, [&](const Vec& x, const MomentumNodes& nodes, const std::vector<double>& Q) {
    double sum = 0.0;
    for (double q : Q) sum += q;
    out.total += sum;
    if (x.norm() < r_min) return;
    out.in_region += sum;
    local.clear();
    for (const PhasePoint& p : targets)
      if ((p.x - x).norm() <= delta) local.push_back(&p);
    if (local.empty()) return;
    mark.assign(Q.size(), 0);
    const int K = nodes.K;
    auto range = [&](double c, int& lo, int& hi) {
      lo = std::max(0, static_cast<int>(std::ceil((c - delta - nodes.xi0) / nodes.dxi)));
      hi = std::min(K - 1, static_cast<int>(std::floor((c + delta - nodes.xi0) / nodes.dxi)));
    };
    for (const PhasePoint* p : local) {
      int a0, b0;
      range(p->xi[0], a0, b0);
      if (nodes.n == 1) {
        for (int j = a0; j <= b0; ++j) mark[j] = 1;
        continue;
      }
      int a1, b1;
      range(p->xi[1], a1, b1);
      for (int j0 = a0; j0 <= b0; ++j0) {
        const double d0 = nodes.xi0 + j0 * nodes.dxi - p->xi[0];
        for (int j1 = a1; j1 <= b1; ++j1) {
          const double d1 = nodes.xi0 + j1 * nodes.dxi - p->xi[1];
          if (d0 * d0 + d1 * d1 <= delta * delta) mark[static_cast<std::size_t>(j0) * K + j1] = 1;
        }
      }
    }
    for (std::size_t j = 0; j < Q.size(); ++j)
      if (mark[j]) out.near += Q[j];
  });
  out.total *= weight;
  out.in_region *= weight;
  out.near *= weight;
  return out;
}

MassNear mass_near(const GridState& s, const ManifoldPatch& patch, double delta, const HusimiWindow& w,
                   double r_min) {
  std::vector<PhasePoint> pts;
  pts.reserve(patch.samples.size());
  for (const auto& smp : patch.samples) pts.push_back(smp.rho);
  return mass_near(s, pts, delta, w, r_min);
}

void write_husimi_csv(const std::string& path, const HusimiField& f, double threshold) {
  const int n = f.centers.empty() ? 0 : static_cast<int>(f.centers.front().size());
  std::vector<std::string> header;
  for (int a = 0; a < n; ++a) header.push_back("x" + std::to_string(a + 1));
  for (int a = 0; a < n; ++a) header.push_back("xi" + std::to_string(a + 1));
  header.push_back("Q");
  io::CsvTable t(header);
  for (std::size_t c = 0; c < f.centers.size(); ++c)
    for (std::size_t j = 0; j < f.xi.size(); ++j) {
      if (f.values[c][j] <= threshold) continue;
      std::vector<double> row;
      for (int a = 0; a < n; ++a) row.push_back(f.centers[c][a]);
      for (int a = 0; a < n; ++a) row.push_back(f.xi[j][a]);
      row.push_back(f.values[c][j]);
      t.add_numeric_row(row);
    }
  io::atomic_write(path, t.str());
}

}  // namespace critscat
