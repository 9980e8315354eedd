#pragma once

// Short-range potentials with a non-degenerate barrier top at the origin,
// plus a few test models (free, quadratic, wells) that deliberately violate
// the barrier assumptions.

#include "critscat/types.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>

namespace critscat {

/// Value, gradient and Hessian of V at one point.
struct Evaluation {
  double value = 0.0;
  Vec gradient;
  Mat hessian;
};

/// Polymorphic evaluator. Implementations are immutable and reentrant.
class Potential {
 public:
  virtual ~Potential() = default;
  virtual int dim() const = 0;
  virtual double value(const Vec& x) const = 0;
  virtual Vec gradient(const Vec& x) const = 0;
  virtual Mat hessian(const Vec& x) const = 0;
};

/// Plain description of a model, as read from a config file.
///
/// JSON schema (schema_version 1):
///   { "family": "gaussian" | "rational" | "eckart" | "quadratic" |
///               "truncated_quadratic" | "free" | "double_bump" |
///               "gaussian_well" | "harmonic",
///     "n": int, "E0": number, "lambda": [numbers], "rho": number,
///     "params": { ... family specific ... } }
struct ModelSpec {
  std::string family = "gaussian";
  int n = 2;
  double E0 = 1.0;
  std::vector<double> lambda{1.0, 2.0};
  double rho = 2.0;
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

inline constexpr int kModelSchemaVersion = 1;

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

class PotentialModel {
 public:
  PotentialModel() = default;
  explicit PotentialModel(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  int dim() const { return spec_.n; }
  double E0() const { return spec_.E0; }
  double rho() const { return spec_.rho; }
  const std::vector<double>& lambda() const { return spec_.lambda; }
  const std::string& family() const { return spec_.family; }

  /// Whether V depends on |x| only.
  bool radial() const { return radial_; }
  /// Whether the family is short range (rho > 1 decay).
  bool short_range() const { return short_range_; }
  /// Typical length sqrt(E0)/lambda_1 (1 for models without a barrier).
  double length_scale() const { return length_scale_; }
  /// Radius beyond which |V| is negligible (below 1e-16 E scale), or a
  /// conservative bound for polynomially decaying models.
  double support_radius() const { return support_radius_; }

  double value(const Vec& x) const { return impl_->value(x); }
  Vec gradient(const Vec& x) const { return impl_->gradient(x); }
  Mat hessian(const Vec& x) const { return impl_->hessian(x); }

  /// Energy p(x, xi) = |xi|^2/2 + V(x).
  double energy(const PhasePoint& p) const { return 0.5 * p.xi.squaredNorm() + value(p.x); }

  /// Stable 64-bit hash of the canonical JSON form.
  std::uint64_t hash() const;
  std::string hash_hex() const;

 private:
  ModelSpec spec_;
  std::shared_ptr<const Potential> impl_;
  bool radial_ = false;
  bool short_range_ = true;
  double length_scale_ = 1.0;
  double support_radius_ = 12.0;
};

PotentialModel model_from_json(const nlohmann::json& j);
PotentialModel model_from_text(const std::string& text);

/// Convenience constructors for the bundled families.
PotentialModel make_free(int n);
PotentialModel make_gaussian(double E0, std::vector<double> lambda, double angle = 0.0);
PotentialModel make_rational(double E0, std::vector<double> lambda, double power);
PotentialModel make_eckart(double E0, double lambda);
PotentialModel make_quadratic(double E0, std::vector<double> lambda, bool truncated = false);
PotentialModel make_double_bump(double E0, double lambda, double offset, double height, double width);
PotentialModel make_gaussian_well(int n, double depth, double width);
PotentialModel make_harmonic(int n, double omega);

/// Value/gradient/Hessian triple with finiteness check.
Evaluation evaluate(const PotentialModel& model, const Vec& x);

struct ValidationGrid {
  double ball_radius = 0.0;    // 0: 4 length scales
  int points_per_axis = 41;    // ball grid resolution (n <= 2)
  double far_radius = 0.0;     // 0: 10 length scales; annulus [R, 4R]
  int far_samples = 400;
  int trapped_probes = 48;
  std::uint64_t seed = 12345;
  double escape_radius = 0.0;  // 0: 20 length scales
  double horizon = 0.0;        // 0: 200 / lambda_1
};

struct ValidationReport {
  bool max_at_origin = false;   // (A1) local part: V(0)=E0>0, grad 0, Hess < 0
  bool decay_ok = false;
  bool unique_max = false;
  bool trapped_probe_ok = false;
  int probes_run = 0;
  int probes_flagged = 0;
  std::vector<std::string> messages;
  std::array<double, 3> decay_sup_inner{};  // weighted sup per derivative order
  std::array<double, 3> decay_sup_outer{};

  bool all_passed() const { return max_at_origin && decay_ok && unique_max && trapped_probe_ok; }
};

ValidationReport validate_assumptions(const PotentialModel& model, const ValidationGrid& grid = {});

struct Linearization {
  Vec lambda;  // ascending
  Mat axes;    // columns: principal axes matching lambda
  Mat field;   // [[0, I], [diag(lambda^2), 0]] in principal coordinates
  Mat field_ambient;  // same operator in the original coordinates
};

Linearization linearization(const PotentialModel& model);

}  // namespace critscat
