#pragma once

// Stable/unstable Lagrangian manifolds of the fixed point (0,0) at energy E0:
// sampling, leading coefficient vectors g, half-trajectory actions and
// spherical traces at infinity.
//
// Parametrization: a point of Lambda+ is labelled (u, tau) with u a unit
// vector in the principal coordinates of Hess V(0) and tau the outward flow
// time. It is the time-(tau + s) image of the linear seed
//   c_j = u_j * ell * (delta/ell)^(lambda_j/lambda_1),  xi = +lambda_j c_j,
// with s = log(eps/delta)/lambda_1, so that tau = 0 sits at Lyapunov radius
// eps independently of the seed depth delta. Lambda- is the same with
// xi = -lambda_j c_j and backward time.

#include "critscat/asymptotics.hpp"

namespace critscat {

enum class ManifoldSide { plus, minus };  // Lambda+ (unstable), Lambda- (stable)

std::string to_string(ManifoldSide s);

struct LinearSplitting {
  Mat unstable;  // 2n x n, columns (a_j, lambda_j a_j)
  Mat stable;    // 2n x n, columns (a_j, -lambda_j a_j)
};

LinearSplitting linearized_splitting(const PotentialModel& model);

struct ManifoldOptions {
  double eps = 1e-3;          // seed sphere radius, in units of the length scale
  double seed_depth = 1e-6;   // delta / eps
  double R_patch = 3.0;       // outer radius of the patch, length units
  double mesh = 0.05;         // target spacing of patch samples in phase space
  int resolution = 32;        // initial number of seed directions
  int max_refine = 10;        // bisection depth for n = 2
  double tau_max = 60.0;      // in units of 1/lambda_1
  double g_window_lo = 1e-7;  // |x| window for the g fit, length units
  double g_window_hi = 1e-4;
  double rel_tol = 1e-11;
  double g_low_confidence = 1e-3;  // |g| below this fraction of the window scale
  ScatterOptions scatter;          // for traces at infinity
};

/// Leading coefficient fit e^{-lambda_1 t} x(t) -> g.
struct GFit {
  Vec g;
  double residual = 0.0;  // relative RMS of the fit
  bool low_confidence = false;
};

struct ManifoldSample {
  PhasePoint rho;
  Mat frame;            // 2n x n: d/d(sphere params of u), then H_p
  Vec g;
  double g_residual = 0.0;
  bool g_low_confidence = false;
  double tau = 0.0;
  Vec u;                // seed direction, principal coordinates
  Mat u_basis;          // n x (n-1) basis of u^perp used for the frame
  double action = 0.0;  // integral of |xi|^2 over the half trajectory
  int trajectory = -1;
};

struct ManifoldPatch {
  ManifoldSide side = ManifoldSide::plus;
  std::vector<ManifoldSample> samples;
  int trajectories = 0;
  double eps = 0.0;          // absolute
  double seed_radius = 0.0;  // absolute delta
  int refinement_level = 0;
  double R_patch = 0.0;
  double mesh = 0.0;
  double max_energy_error = 0.0;  // relative
  double max_lagrangian_defect = 0.0;
  std::string model_hash;
  ManifoldOptions options;
};

/// The manifold point labelled (u, tau), with transported frame, g and action.
ManifoldSample manifold_point(const PotentialModel& model, ManifoldSide side, const Vec& u, double tau,
                              const ManifoldOptions& opts = {});

ManifoldPatch sample_manifold(const PotentialModel& model, ManifoldSide side, const ManifoldOptions& opts = {});

/// g vector of the manifold point (u, tau).
GFit g_vector(const PotentialModel& model, ManifoldSide side, const Vec& u, double tau,
              const ManifoldOptions& opts = {});

struct Pairing {
  double value = 0.0;
  bool in_tilde_set = false;
};

Pairing pairing(const Vec& g_plus, const Vec& g_minus, double pairing_tol = 1e-4);

/// Largest normalized symplectic form over pairs of frame columns.
double lagrangian_defect(const Mat& frame);

/// The sample of the manifold lying over the position z (x(rho) = z).
/// Throws ProjectionError at caustics or when Newton fails.
ManifoldSample project_to_position(const PotentialModel& model, const ManifoldPatch& patch, const Vec& z);

struct HalfAction {
  double S = 0.0;
  Vec xi;  // momentum of the manifold point over z
  ManifoldSample sample;
};

/// S+(z) (resp. S-(z)): integral of |xi|^2/2 + E0 - V over the half
/// trajectory through the point of Lambda+ (Lambda-) over z.
HalfAction manifold_action(const PotentialModel& model, const ManifoldPatch& patch, const Vec& z);

struct SphericalTracePoint {
  Vec direction;  // theta for Lambda+, omega for Lambda-
  Vec cotangent;  // -sqrt(2 E0) Z
  Vec Z;
  Vec u;
  int trajectory = -1;
};

struct SphericalTrace {
  std::vector<SphericalTracePoint> points;
  int rank = 0;  // numerical dimension of the sampled locus
};

SphericalTrace spherical_trace(const PotentialModel& model, const ManifoldPatch& patch);

/// Asymptotic data of the trajectory through the seed direction u.
SphericalTracePoint trace_point(const PotentialModel& model, ManifoldSide side, const Vec& u,
                                const ManifoldOptions& opts = {});

struct CriticalAction {
  double S = 0.0;
  Vec direction;
  Vec z;  // Z of the branch
  Vec u;
};

/// All branches of Lambda+ (Lambda-) with outgoing (incoming) asymptotic
/// direction `direction`, with their modified actions
///   S^m = integral of (|xi|^2 - 2 E0 1_{+-t > 0}) dt
/// in the asymptote time of gamma_{+-}(t, direction, z, E0).
std::vector<CriticalAction> critical_actions(const PotentialModel& model, const ManifoldPatch& patch,
                                             const Vec& direction);

/// Critical action of the single branch started from seed direction u.
CriticalAction critical_action_at(const PotentialModel& model, ManifoldSide side, const Vec& u,
                                  const ManifoldOptions& opts = {});

/// JSON (samples, frames, g, diagnostics) and flat CSV export.
void write_patch(const std::string& json_path, const std::string& csv_path, const PotentialModel& model,
                 const ManifoldPatch& patch);

}  // namespace critscat
