#pragma once

// Hamiltonian flow of p(x, xi) = |xi|^2/2 + V(x), with optional transport of
// tangent vectors (variational flow) and action quadratures carried along.

#include "critscat/potential.hpp"

#include <functional>
#include <span>
#include <string>

namespace critscat {

struct FlowOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  double energy_drift_tol = 1e-9;  // relative, over the whole trajectory
  double symplectic_tol = 1e-7;
  double initial_step = 1e-2;
  double min_step = 1e-13;
  double max_step = 0.5;
  double horizon = 1e5;            // |t| allowed per call
  std::size_t max_steps = 4'000'000;
  bool energy_guard = true;

  /// Scale both tolerances (CLI --tol-scale).
  FlowOptions scaled(double s) const {
    FlowOptions o = *this;
    o.abs_tol *= s;
    o.rel_tol *= s;
    return o;
  }
};

/// Phase point plus transported tangent vectors (2n x k, may be empty) and
/// the running integrals of |xi|^2 and V along the path.
struct AugmentedState {
  PhasePoint point;
  Mat tangents;
  double xi2_integral = 0.0;
  double v_integral = 0.0;

  AugmentedState() = default;
  explicit AugmentedState(PhasePoint p, Mat t = Mat()) : point(std::move(p)), tangents(std::move(t)) {}
};

struct IntegrationResult {
  AugmentedState state;
  double t = 0.0;
  bool stopped_early = false;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  double max_energy_drift = 0.0;  // relative to the energy reference
};

/// Called after every accepted step (and once at the start). Returning false
/// stops the integration at that state.
using StepObserver = std::function<bool(double t, const AugmentedState& s)>;

class FlowIntegrator {
 public:
  FlowIntegrator(const PotentialModel& model, FlowOptions opts = {});

  /// Integrates from t0 to t1 (either direction). Steps are clipped so that
  /// every entry of `stops` inside the interval is hit exactly.
  IntegrationResult integrate(AugmentedState s, double t0, double t1,
                              const StepObserver& observer = {},
                              std::span<const double> stops = {}) const;

  const PotentialModel& model() const { return *model_; }
  const FlowOptions& options() const { return opts_; }

 private:
  const PotentialModel* model_;
  FlowOptions opts_;
};

/// H_p(x, xi) = (xi, -grad V(x)).
Vec vector_field(const PotentialModel& model, const PhasePoint& p);

PhasePoint flow(const PotentialModel& model, const PhasePoint& p, double t, const FlowOptions& opts = {});

struct VariationalFlow {
  PhasePoint point;
  Mat M;  // d exp(tH_p), 2n x 2n
};

VariationalFlow flow_with_variational(const PotentialModel& model, const PhasePoint& p, double t,
                                      const FlowOptions& opts = {});

/// ||M^T J M - J||_max normalized by max(1, ||M||_max^2).
double symplectic_defect(const Mat& M);

struct TrajectorySample {
  double t;
  PhasePoint point;
  Mat M;  // empty unless variational data was requested
};

struct TrajectorySegment {
  std::vector<TrajectorySample> samples;
  double energy = 0.0;
  FlowOptions options;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  double max_energy_drift = 0.0;
  std::string model_hash;

  int dim() const { return samples.empty() ? 0 : samples.front().point.dim(); }
};

/// Integrates and records every accepted step, or only the times in
/// `sample_times` when that list is non-empty.
TrajectorySegment trajectory(const PotentialModel& model, const PhasePoint& p, double t,
                             const FlowOptions& opts = {}, bool variational = false,
                             std::span<const double> sample_times = {});

enum class EscapeKind { escaped, converged_to_origin, undecided };

struct EscapeOutcome {
  EscapeKind kind = EscapeKind::undecided;
  double t = 0.0;
  double min_norm = 0.0;  // smallest ||(x, xi)|| seen
};

std::string to_string(EscapeKind k);

/// Follows the trajectory for time T_max (negative: backward) and reports
/// whether |x| exceeds R or the point collapses onto the fixed point (0,0).
EscapeOutcome escape_time(const PotentialModel& model, const PhasePoint& p, double R, double T_max,
                          const FlowOptions& opts = {}, double converge_threshold = 1e-6);

/// CSV with header `t, x1..xn, xi1..xin, energy` plus a JSON sidecar next to
/// it (same stem, `.json`) with model hash, tolerances and integrator name.
void write_trajectory(const std::string& csv_path, const PotentialModel& model, const TrajectorySegment& seg);

inline constexpr const char* kIntegratorName = "rkf78-adaptive-energy-guard";

}  // namespace critscat
