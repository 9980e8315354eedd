#pragma once

// (omega, theta)-trajectory branches and the leading-order semiclassical
// scattering amplitude
//   A = sum_j sigma_hat_j^{-1/2} exp(i S_j / h - i mu_j pi / 2).

#include "critscat/asymptotics.hpp"

#include <boost/rational.hpp>

namespace critscat {

struct AmplitudeOptions {
  ScatterOptions scatter;
  double R_impact = 0.0;  // search disc radius; 0: 4 length scales
  int starts = 64;
  double dedup = 1e-4;
  double branch_tol = 1e-6;  // relative to sqrt(2E)
  double sigma_floor = 1e-8;
  double fd_step = 1e-5;     // central-difference step in z, length units
  double consistency_tol = 1e-3;
  bool check_fd = true;
  int newton_iters = 40;
  std::uint64_t seed = 0;

  // Branch data feeds phases exp(iS/h); integrate 100x tighter than the
  // flow defaults so the two action integrands agree to ~1e-10.
  AmplitudeOptions() {
    scatter.flow = scatter.flow.scaled(1e-2);
    scatter.flow.energy_drift_tol = 1e-11;
  }
};

/// Everything computed along one incoming trajectory gamma_-(., omega, z, E).
struct Transit {
  Vec omega, z;
  double E = 0.0;
  AsymptoticData out;
  Mat basis;       // n x (n-1) impact-plane basis used for d/dz
  Mat dxi_dz;      // n x (n-1), variational
  Mat dx_dz;       // n x (n-1), at the end of the fit window
  double sigma_hat = 0.0;
  double action = 0.0;          // modified action, -2V integrand
  double action_direct = 0.0;   // same from the |xi|^2 - 2E integrand
  int maslov = 0;
  int maslov_interior = 0;      // sign changes along the integrated part
  int maslov_tail = 0;          // caustics on the free outgoing tail
  double min_caustic_measure = 0.0;
};

Transit compute_transit(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                        const AmplitudeOptions& opts = {});

struct SigmaHat {
  double variational = 0.0;
  double finite_difference = 0.0;
  double relative_gap = 0.0;
};

/// sigma_hat by variational transport and by central differences; throws
/// ConsistencyError when they disagree by more than consistency_tol.
SigmaHat sigma_hat(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                   const AmplitudeOptions& opts = {});

/// Modified action S = integral (|xi|^2 - 2E) dt - <x_inf, sqrt(2E) theta>.
double modified_action(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                       const AmplitudeOptions& opts = {});

int maslov_index(const PotentialModel& model, const Vec& omega, const Vec& z, double E,
                 const AmplitudeOptions& opts = {});

struct ScatteringBranch {
  int index = 0;
  Vec z;
  Vec theta;
  double sigma_hat = 0.0;
  double sigma_hat_fd = 0.0;
  double action = 0.0;
  int maslov = 0;
  double residual = 0.0;  // |xi_inf - sqrt(2E) theta| / sqrt(2E)
  bool on_boundary = false;
};

struct BranchSearch {
  std::vector<ScatteringBranch> branches;
  int starts = 0;
  int converged = 0;
  int captured = 0;
  std::vector<std::string> warnings;
};

BranchSearch find_branches(const PotentialModel& model, const Vec& omega, const Vec& theta, double E,
                           const AmplitudeOptions& opts = {});

struct AmplitudeResult {
  cplx value{0.0, 0.0};
  double h = 0.0;
  double E = 0.0;
  Vec omega, theta;
  std::vector<ScatteringBranch> branches;
  std::string status = "ok";
  std::vector<std::string> warnings;
  // Normalization: value is the branch sum itself (c0 = 1). For the
  // physical amplitude f of -h^2/2 Laplacian + V one has, classically,
  // |f| = (2E)^{n/4} |value| branch by branch.
  std::string convention = "A = sum sigma_hat^{-1/2} exp(i S/h - i mu pi/2); |f| = (2E)^{n/4} |A|";
};

/// Recomputes the branch sum at h (the h dependence is only in the phases).
cplx assemble(const std::vector<ScatteringBranch>& branches, double h);

AmplitudeResult semiclassical_leading_amplitude(const PotentialModel& model, const Vec& omega, const Vec& theta,
                                                double E, double h, const AmplitudeOptions& opts = {});

nlohmann::json to_json(const AmplitudeResult& r);

struct RelationRow {
  Vec theta, eta_plus;  // eta = -sqrt(2E) z
  Vec omega, eta_minus;
  std::string status;
};

std::vector<RelationRow> scattering_relation_table(const PotentialModel& model, double E,
                                                   const std::vector<std::pair<Vec, Vec>>& grid,
                                                   const AmplitudeOptions& opts = {});

struct CriticalOrderData {
  double resolvent_order = 0.0;  // 1 - sum lambda / (2 lambda_1)
  double scattering_order = 0.0; // 1/2 - sum lambda / (2 lambda_1)
  std::vector<double> lambda;
};

CriticalOrderData critical_order_exponents(const std::vector<double>& lambda);
CriticalOrderData critical_order_exponents(const PotentialModel& model);

using Rational = boost::rational<long long>;

struct CriticalOrderExact {
  Rational resolvent_order;
  Rational scattering_order;
};

/// Same formulas in exact rational arithmetic (lambda_1 = smallest entry).
CriticalOrderExact critical_order_exponents_exact(const std::vector<Rational>& lambda);

}  // namespace critscat
