#pragma once

// Exact quantum reference solvers for P = -h^2/2 Laplacian + V:
// 1D Numerov scattering, 2D radial partial waves, split-step propagation on
// periodic grids (n <= 2) and a Gaussian-window (Husimi) phase-space density.

#include "critscat/manifolds.hpp"

#include <functional>

namespace critscat {

// ---------------------------------------------------------------- 1D Numerov

struct NumerovOptions {
  double points_per_wavelength = 60.0;
  double v_cut = 1e-12;  // domain ends where |V| < v_cut * E
  double unitarity_tol = 1e-6;
  bool check_convergence = true;  // rerun at doubled resolution
};

struct Transmission1D {
  cplx T{0.0, 0.0};
  cplx R{0.0, 0.0};
  double unitarity_defect = 0.0;  // | |T|^2 + |R|^2 - 1 |
  double convergence = 0.0;       // |T|^2 change under doubled resolution
  double L = 0.0;                 // domain [-L, L]
  std::size_t points = 0;
};

/// Stationary scattering at energy E from the left. Numerov with the exact
/// discrete dispersion relation of the scheme in the free end regions, so
/// plane waves are exact discrete solutions and T, R carry no matching error.
Transmission1D numerov_scattering_1d(const PotentialModel& model, double E, double h,
                                     const NumerovOptions& opts = {});

/// Inverted-oscillator limit |T|^2 = 1 / (1 + exp(-2 pi E1 / lambda)).
double barrier_top_transmission(double E1, double lambda);

// ------------------------------------------------------ 2D radial partial waves
//
// Normalization: psi ~ exp(i k x.omega) + f(theta) exp(i k r) / sqrt(r) with
// k = sqrt(2E)/h and
//   f(theta) = sqrt(2/(pi k)) e^{i pi/4} sum_m e^{i delta_m} sin(delta_m) e^{i m theta}.
// In this normalization |f| = (2E)^{1/2} |A| for the semiclassical branch sum A
// of amplitude.hpp (n = 2).

struct PartialWaveOptions {
  double delta_cut = 1e-10;
  int consecutive = 4;      // channels below delta_cut needed to stop
  int m_max = 20000;
  double rel_tol = 1e-11;   // radial ODE
  double v_cut = 1e-13;     // matching radius where |V| < v_cut * E
  bool check_doubling = true;
};

struct PartialWaveResult {
  std::vector<double> theta;
  std::vector<cplx> f;
  std::vector<double> delta;  // delta_m, m = 0..m_cut (delta_{-m} = delta_m)
  int m_cut = 0;
  double k = 0.0;
  double r_match = 0.0;
  double truncation_change = 0.0;  // max |f| change from m_cut to 2 m_cut
  double sigma_total = 0.0;        // integral |f|^2 d theta from the phase shifts
  double optical_defect = 0.0;     // relative gap to sqrt(8 pi / k) Im(e^{-i pi/4} f(0))
};

/// Phase shift of channel m (|m|), with r_match the radius where V is negligible.
double radial_phase_shift(const PotentialModel& model, int m, double E, double h, double r_match,
                          double rel_tol = 1e-11);

PartialWaveResult partial_wave_amplitude(const PotentialModel& model, double E, double h,
                                         const std::vector<double>& theta, const PartialWaveOptions& opts = {});

/// First Born approximation in the same normalization, by radial Hankel
/// quadrature: f_B = -sqrt(2/(pi k)) e^{i pi/4} (pi/h^2) int V(r) J0(q r) r dr.
cplx born_amplitude_2d(const PotentialModel& model, double E, double h, double theta);

// ------------------------------------------------------------- grid states

/// Periodic grid on [lo, hi) per axis, row-major with the last axis fastest.
struct GridSpec {
  std::vector<int> N;
  std::vector<double> lo, hi;

  int dim() const { return static_cast<int>(N.size()); }
  std::size_t size() const;
  double dx(int a) const { return (hi[a] - lo[a]) / N[a]; }
  double cell() const;  // product of dx
  double coord(int a, int i) const { return lo[a] + i * dx(a); }
  /// Signed FFT wavenumber of index i on axis a.
  double wavenumber(int a, int i) const;
  Vec point(std::size_t flat) const;
};

GridSpec make_grid(std::vector<int> N, std::vector<double> lo, std::vector<double> hi);

struct GridState {
  GridSpec grid;
  std::vector<cplx> psi;
  double h = 0.0;
  double t = 0.0;
  double absorbed = 0.0;  // mass removed by the absorbing layer so far

  double norm2() const;
};

/// (pi h)^{-n/4} exp(-|x-x0|^2/(2h) + i xi0.(x-x0)/h). Throws GridError when
/// xi0 is beyond the Nyquist momentum or the packet does not fit the grid.
GridState coherent_state(const Vec& x0, const Vec& xi0, double h, const GridSpec& grid);

/// Throws GridError unless dx <= h / (4 xi_max) on every axis.
void check_resolution(const GridSpec& grid, double h, double xi_max);

/// Position and momentum expectation values.
PhasePoint centroid(const GridState& s);

/// |<a|b>|^2 for states on the same grid.
double fidelity(const GridState& a, const GridState& b);

struct PropagationOptions {
  double dt = 1e-2;
  double absorb_width = 0.0;     // absorbing layer thickness at each face; 0: none
  double absorb_strength = 20.0; // per unit time at the outer face
  bool check_halving = true;     // repeat with dt/2 and report the difference
  double norm_tol = 1e-8;
  std::function<void(const GridState&)> on_step;  // after every full step
};

struct PropagationReport {
  double norm_drift = 0.0;       // | |psi|^2 + absorbed - |psi0|^2 |
  double halving_change = -1.0;  // L2 distance to the dt/2 result (-1 if skipped)
  std::size_t steps = 0;
};

/// Strang split-step e^{-itP/h}: half potential, exact kinetic step in Fourier
/// space, half potential. Throws StepSizeError when the mass balance drifts
/// by more than norm_tol.
GridState propagate(const GridState& s, const PotentialModel& model, double t, const PropagationOptions& opts = {},
                    PropagationReport* report = nullptr);

/// Binary snapshot: "SCGS" magic, uint32 version (1), uint32 n,
/// n x uint64 points, n x f64 lo, n x f64 hi, f64 h, f64 t, then
/// interleaved re/im f64 payload. All little endian.
void write_snapshot(const std::string& path, const GridState& s);
GridState read_snapshot(const std::string& path);

// --------------------------------------------------------------- Husimi

/// Q(x, xi) = |<phi_{x,xi}|psi>|^2 / (2 pi h)^n, integrating to |psi|^2.
/// Evaluated on a box of window centers x with spacing x_step and, for each,
/// on the FFT momentum grid of a local box cropped to |xi_a| <= xi_max.
struct HusimiWindow {
  Vec x_lo, x_hi;
  double x_step = 0.0;     // 0: sqrt(h)/2
  double xi_max = 2.0;
  double half_width = 6.0; // local box half width, in units of sqrt(h)
};

struct HusimiField {
  std::vector<Vec> centers;
  std::vector<Vec> xi;             // shared momentum nodes
  std::vector<std::vector<double>> values;  // [center][xi node]
  double weight = 0.0;             // dx^n dxi^n quadrature weight
  double h = 0.0;

  double total() const;
};

using HusimiVisitor = std::function<void(const Vec& x, const std::vector<Vec>& xi, const std::vector<double>& Q)>;

/// Streams Q center by center; returns the quadrature weight per node.
double husimi_visit(const GridState& s, const HusimiWindow& w, const HusimiVisitor& visit);

HusimiField husimi_wavefront(const GridState& s, const HusimiWindow& w);

struct MassNear {
  double total = 0.0;      // Husimi mass over the window
  double in_region = 0.0;  // mass with |x| >= r_min
  double near = 0.0;       // part of in_region within delta of a target
  double fraction() const { return in_region > 0 ? near / in_region : 0.0; }
};

/// Husimi mass within delta of a set of phase points, where (x, xi) is
/// within delta of rho when |x - x(rho)| <= delta and |xi - xi(rho)| <= delta.
MassNear mass_near(const GridState& s, const std::vector<PhasePoint>& targets, double delta,
                   const HusimiWindow& w, double r_min = 0.0);

MassNear mass_near(const GridState& s, const ManifoldPatch& patch, double delta, const HusimiWindow& w,
                   double r_min = 0.0);

void write_husimi_csv(const std::string& path, const HusimiField& f, double threshold = 0.0);

}  // namespace critscat
