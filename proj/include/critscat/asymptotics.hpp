#pragma once

// Free-asymptote parametrization of scattering trajectories: incoming
// (alpha, z, E) data to phase points, and escaping trajectories back to
// asymptotic momentum/impact data.

#include "critscat/flow.hpp"

namespace critscat {

enum class Side { incoming, outgoing };

struct ImpactCoordinates {
  Vec alpha;  // unit direction
  Vec z;      // impact parameter, orthogonal to alpha
  double E = 0.0;
  Side side = Side::incoming;
};

struct AsymptoticData {
  Vec xi_inf;
  Vec x_inf;
  Vec Theta;
  Vec Z;
  double residual = 0.0;  // weighted RMS of the linear fit
  double window_lo = 0.0;
  double window_hi = 0.0;
};

struct ScatterOptions {
  FlowOptions flow;
  double R0_scale = 12.0;   // start radius in potential length units
  double R_fit = 30.0;
  double asymptote_tol = 1e-8;
  int max_iter = 60;
  double capture_threshold = 1e-6;
  double capture_horizon = 50.0;  // in units of 1/lambda_1, beyond the free transit time
  int fit_samples = 64;
};

/// Orthonormal basis (n x (n-1)) of alpha^perp. For n = 2 this is the
/// counter-clockwise rotation of alpha by pi/2.
Mat impact_basis(const Vec& alpha);

/// Phase point at |x| ~ R0 on the corrected free line, together with the time
/// tau it corresponds to on the trajectory gamma(t, alpha, z, E).
struct AsymptoteStart {
  PhasePoint point;
  double tau = 0.0;
  int iterations = 0;
  double correction = 0.0;  // size of the departure from the free line
  // Far point used by the correction loop, where the trajectory is free to
  // within the tail of V; tangent transport is best started here.
  PhasePoint far_point;
  double tau_far = 0.0;
};

AsymptoteStart asymptote_start(const PotentialModel& model, const ImpactCoordinates& ic,
                               const ScatterOptions& opts = {});

/// gamma_{-/+}(0, alpha, z, E).
PhasePoint init_from_asymptote(const PotentialModel& model, const ImpactCoordinates& ic,
                               const ScatterOptions& opts = {});

/// Weighted least-squares fit x(t) ~ xi_inf t + x_inf over the tail window of
/// an escaping trajectory (forward or backward in time).
AsymptoticData extract_asymptotics(const TrajectorySegment& traj, double rho = 2.0, double R_fit = 30.0);

/// Result of following a trajectory out of the interaction region: the fit,
/// and the augmented state (tangents, quadratures) at the end of the window.
struct EscapeRun {
  AsymptoticData asym;
  AugmentedState end;
  double t_end = 0.0;
};

EscapeRun escape_run(const PotentialModel& model, const AugmentedState& s, double t0, double dir,
                     const ScatterOptions& opts = {}, const StepObserver& observer = {});

/// Integral of V along the free line x_inf + xi_inf t over the half line of
/// times beyond t_from in direction dir (a positive-measure integral).
double free_tail_potential_integral(const PotentialModel& model, const Vec& x_inf, const Vec& xi_inf, double t_from,
                                    double dir);

/// Follows p forward (dir > 0) or backward until it leaves the interaction
/// region and fits its asymptote. Throws CapturedError if it falls onto the
/// fixed point and NoAsymptoteError if it does not escape in time.
AsymptoticData escape_asymptotics(const PotentialModel& model, const PhasePoint& p, double t0, double dir,
                                  const ScatterOptions& opts = {});

struct ScatteringData {
  Vec theta;
  Vec z_plus;
  AsymptoticData out;
};

ScatteringData scattering_data(const PotentialModel& model, const Vec& omega, const Vec& z_minus, double E,
                               const ScatterOptions& opts = {});

}  // namespace critscat
