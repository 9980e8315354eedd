#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace critscat {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using cplx = std::complex<double>;

/// A point (x, xi) of T*R^n.
struct PhasePoint {
  Vec x;
  Vec xi;

  PhasePoint() = default;
  PhasePoint(Vec x_, Vec xi_) : x(std::move(x_)), xi(std::move(xi_)) {}

  int dim() const { return static_cast<int>(x.size()); }

  /// Packed (x, xi) as a 2n-vector.
  Vec packed() const {
    Vec v(2 * x.size());
    v << x, xi;
    return v;
  }
  static PhasePoint unpack(const Vec& v) {
    const auto n = v.size() / 2;
    return {v.head(n), v.tail(n)};
  }
  double norm() const { return std::sqrt(x.squaredNorm() + xi.squaredNorm()); }
  bool finite() const { return x.allFinite() && xi.allFinite(); }
};

/// Standard symplectic matrix J = [[0, I], [-I, 0]] on R^{2n}.
inline Mat symplectic_j(int n) {
  Mat J = Mat::Zero(2 * n, 2 * n);
  J.topRightCorner(n, n).setIdentity();
  J.bottomLeftCorner(n, n) = -Mat::Identity(n, n);
  return J;
}

// Error hierarchy. Every error carries a short machine-readable kind so the
// CLI can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CRITSCAT_DEFINE_ERROR(Name, kind_str)                                  \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what) : Error(kind_str, what) {}          \
  };

CRITSCAT_DEFINE_ERROR(ModelEvaluationError, "model-evaluation")
CRITSCAT_DEFINE_ERROR(AssumptionViolation, "assumption-violation")
CRITSCAT_DEFINE_ERROR(ConfigError, "config")
CRITSCAT_DEFINE_ERROR(InitializationError, "initialization")
CRITSCAT_DEFINE_ERROR(NoAsymptoteError, "no-asymptote")
CRITSCAT_DEFINE_ERROR(CapturedError, "captured")
CRITSCAT_DEFINE_ERROR(SeedError, "seed")
CRITSCAT_DEFINE_ERROR(ProjectionError, "projection")
CRITSCAT_DEFINE_ERROR(PreconditionError, "precondition")
CRITSCAT_DEFINE_ERROR(ConsistencyError, "consistency")
CRITSCAT_DEFINE_ERROR(PrecisionError, "precision")
CRITSCAT_DEFINE_ERROR(DegenerateDirectionError, "degenerate-direction")
CRITSCAT_DEFINE_ERROR(UndecidableError, "undecidable")
CRITSCAT_DEFINE_ERROR(ResolutionError, "resolution")
CRITSCAT_DEFINE_ERROR(TruncationError, "truncation")
CRITSCAT_DEFINE_ERROR(GridError, "grid")
CRITSCAT_DEFINE_ERROR(StepSizeError, "step-size")
CRITSCAT_DEFINE_ERROR(DimensionError, "dimension")
CRITSCAT_DEFINE_ERROR(IndeterminateRankError, "indeterminate-rank")

#undef CRITSCAT_DEFINE_ERROR

/// Raised when the adaptive integrator cannot continue; keeps the last
/// accepted state so callers can report where things went wrong.
class IntegrationFailure : public Error {
 public:
  IntegrationFailure(const std::string& what, double t, PhasePoint last)
      : Error("integration-failure", what), t_(t), last_(std::move(last)) {}
  double time() const { return t_; }
  const PhasePoint& last_good() const { return last_; }

 private:
  double t_;
  PhasePoint last_;
};

}  // namespace critscat
