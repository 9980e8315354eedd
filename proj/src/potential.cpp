#include "critscat/potential.hpp"

#include "critscat/flow.hpp"
#include "critscat/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace critscat {

namespace {

Mat principal_axes(int n, double angle) {
  Mat Q = Mat::Identity(n, n);
  if (n >= 2 && angle != 0.0) {
    const double c = std::cos(angle), s = std::sin(angle);
    Q(0, 0) = c;
    Q(0, 1) = -s;
    Q(1, 0) = s;
    Q(1, 1) = c;
  }
  return Q;
}

Mat curvature_matrix(const std::vector<double>& lambda, const Mat& Q) {
  const int n = static_cast<int>(lambda.size());
  Vec l2(n);
  for (int j = 0; j < n; ++j) l2[j] = lambda[j] * lambda[j];
  return Q * l2.asDiagonal() * Q.transpose();
}

class FreePotential final : public Potential {
 public:
  explicit FreePotential(int n) : n_(n) {}
  int dim() const override { return n_; }
  double value(const Vec&) const override { return 0.0; }
  Vec gradient(const Vec&) const override { return Vec::Zero(n_); }
  Mat hessian(const Vec&) const override { return Mat::Zero(n_, n_); }

 private:
  int n_;
};

// E0 * exp(-x^T A x / (2 E0))
class GaussianBarrier final : public Potential {
 public:
  GaussianBarrier(double E0, Mat A) : E0_(E0), A_(std::move(A)) {}
  int dim() const override { return static_cast<int>(A_.rows()); }
  double value(const Vec& x) const override { return E0_ * std::exp(-x.dot(A_ * x) / (2 * E0_)); }
  Vec gradient(const Vec& x) const override { return -value(x) / E0_ * (A_ * x); }
  Mat hessian(const Vec& x) const override {
    const Vec Ax = A_ * x;
    return value(x) * (Ax * Ax.transpose() / (E0_ * E0_) - A_ / E0_);
  }

 private:
  double E0_;
  Mat A_;
};

// E0 / (1 + x^T A x / (2 E0 p))^p, Hessian -A at the origin, |V| ~ |x|^{-2p}.
class RationalBarrier final : public Potential {
 public:
  RationalBarrier(double E0, Mat A, double p) : E0_(E0), A_(std::move(A)), p_(p) {}
  int dim() const override { return static_cast<int>(A_.rows()); }
  double value(const Vec& x) const override { return E0_ * std::pow(u(x), -p_); }
  Vec gradient(const Vec& x) const override { return -std::pow(u(x), -p_ - 1) * (A_ * x); }
  Mat hessian(const Vec& x) const override {
    const double uu = u(x);
    const Vec Ax = A_ * x;
    return (p_ + 1) / (E0_ * p_) * std::pow(uu, -p_ - 2) * (Ax * Ax.transpose()) - std::pow(uu, -p_ - 1) * A_;
  }

 private:
  double u(const Vec& x) const { return 1.0 + x.dot(A_ * x) / (2 * E0_ * p_); }
  double E0_;
  Mat A_;
  double p_;
};

// E0 sech^2(a x), a = lambda / sqrt(2 E0).
class EckartBarrier final : public Potential {
 public:
  EckartBarrier(double E0, double lambda) : E0_(E0), a_(lambda / std::sqrt(2 * E0)) {}
  int dim() const override { return 1; }
  double value(const Vec& x) const override {
    const double s = sech(a_ * x[0]);
    return E0_ * s * s;
  }
  Vec gradient(const Vec& x) const override {
    const double s = sech(a_ * x[0]), t = std::tanh(a_ * x[0]);
    Vec g(1);
    g[0] = -2 * a_ * E0_ * s * s * t;
    return g;
  }
  Mat hessian(const Vec& x) const override {
    const double s = sech(a_ * x[0]), t = std::tanh(a_ * x[0]);
    Mat H(1, 1);
    H(0, 0) = 2 * a_ * a_ * E0_ * s * s * (2 * t * t - s * s);
    return H;
  }

 private:
  static double sech(double y) { return 1.0 / std::cosh(y); }
  double E0_, a_;
};

// E0 - x^T A x / 2, optionally clipped at zero (compact support, C^0 at the rim).
class QuadraticBarrier final : public Potential {
 public:
  QuadraticBarrier(double E0, Mat A, bool truncated) : E0_(E0), A_(std::move(A)), truncated_(truncated) {}
  int dim() const override { return static_cast<int>(A_.rows()); }
  double value(const Vec& x) const override {
    const double v = E0_ - 0.5 * x.dot(A_ * x);
    return truncated_ ? std::max(v, 0.0) : v;
  }
  Vec gradient(const Vec& x) const override {
    if (outside(x)) return Vec::Zero(x.size());
    return -(A_ * x);
  }
  Mat hessian(const Vec& x) const override {
    if (outside(x)) return Mat::Zero(x.size(), x.size());
    return -A_;
  }

 private:
  bool outside(const Vec& x) const { return truncated_ && E0_ - 0.5 * x.dot(A_ * x) <= 0.0; }
  double E0_;
  Mat A_;
  bool truncated_;
};

// Isotropic Gaussian barrier plus an off-centre Gaussian bump.
class DoubleBump final : public Potential {
 public:
  DoubleBump(int n, double E0, double lambda, Vec centre, double height, double width)
      : main_(E0, Mat::Identity(n, n) * lambda * lambda), c_(std::move(centre)), H_(height), w_(width) {}
  int dim() const override { return main_.dim(); }
  double value(const Vec& x) const override { return main_.value(x) + bump(x); }
  Vec gradient(const Vec& x) const override { return main_.gradient(x) - bump(x) / (w_ * w_) * (x - c_); }
  Mat hessian(const Vec& x) const override {
    const Vec d = x - c_;
    const Mat I = Mat::Identity(x.size(), x.size());
    return main_.hessian(x) + bump(x) * (d * d.transpose() / std::pow(w_, 4) - I / (w_ * w_));
  }

 private:
  double bump(const Vec& x) const { return H_ * std::exp(-(x - c_).squaredNorm() / (2 * w_ * w_)); }
  GaussianBarrier main_;
  Vec c_;
  double H_, w_;
};

// -W exp(-|x|^2 / (2 s^2)), an attractive lens.
class GaussianWell final : public Potential {
 public:
  GaussianWell(int n, double W, double s) : n_(n), W_(W), s_(s) {}
  int dim() const override { return n_; }
  double value(const Vec& x) const override { return -W_ * g(x); }
  Vec gradient(const Vec& x) const override { return W_ * g(x) / (s_ * s_) * x; }
  Mat hessian(const Vec& x) const override {
    const Mat I = Mat::Identity(n_, n_);
    return W_ * g(x) * (I / (s_ * s_) - x * x.transpose() / std::pow(s_, 4));
  }

 private:
  double g(const Vec& x) const { return std::exp(-x.squaredNorm() / (2 * s_ * s_)); }
  int n_;
  double W_, s_;
};

class HarmonicWell final : public Potential {
 public:
  HarmonicWell(int n, double omega) : n_(n), w2_(omega * omega) {}
  int dim() const override { return n_; }
  double value(const Vec& x) const override { return 0.5 * w2_ * x.squaredNorm(); }
  Vec gradient(const Vec& x) const override { return w2_ * x; }
  Mat hessian(const Vec&) const override { return w2_ * Mat::Identity(n_, n_); }

 private:
  int n_;
  double w2_;
};

bool all_equal(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return std::abs(a - v.front()) <= 1e-15 * std::abs(a); });
}

}  // namespace

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"family", s.family}, {"n", s.n}, {"E0", s.E0}, {"lambda", s.lambda}, {"rho", s.rho}};
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [k, v] : s.params) params[k] = v;
  j["params"] = params;
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  auto require = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw ConfigError(std::string("model spec is missing '") + key + "'");
    return j.at(key);
  };
  try {
    s.family = require("family").get<std::string>();
    s.n = require("n").get<int>();
    const bool needs_barrier = s.family != "free" && s.family != "gaussian_well" && s.family != "harmonic";
    s.E0 = needs_barrier ? require("E0").get<double>() : j.value("E0", 0.0);
    if (needs_barrier) {
      s.lambda = require("lambda").get<std::vector<double>>();
    } else {
      s.lambda = j.value("lambda", std::vector<double>{});
    }
    s.rho = j.value("rho", 2.0);
    s.params.clear();
    if (j.contains("params")) {
      for (const auto& [k, v] : j.at("params").items()) s.params[k] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

PotentialModel::PotentialModel(ModelSpec spec) : spec_(std::move(spec)) {
  const int n = spec_.n;
  if (n < 1) throw ConfigError("model dimension must be >= 1");
  const auto& f = spec_.family;
  const bool barrier = f == "gaussian" || f == "rational" || f == "eckart" || f == "quadratic" ||
                       f == "truncated_quadratic" || f == "double_bump";
  if (barrier) {
    const std::size_t want = f == "double_bump" ? 1u : static_cast<std::size_t>(n);
    if (spec_.lambda.size() != want)
      throw ConfigError("family '" + f + "' needs " + std::to_string(want) + " lambda values");
    if (!(spec_.E0 > 0)) throw ConfigError("barrier families need E0 > 0");
    for (double l : spec_.lambda)
      if (!(l > 0)) throw ConfigError("lambda values must be positive");
    std::vector<double> sorted = spec_.lambda;
    std::sort(sorted.begin(), sorted.end());
    length_scale_ = std::sqrt(spec_.E0) / sorted.front();
  }
  const double angle = spec_.param("angle", 0.0);
  const Mat Q = principal_axes(n, angle);

  if (f == "free") {
    impl_ = std::make_shared<FreePotential>(n);
    radial_ = true;
    support_radius_ = 0.0;
  } else if (f == "gaussian") {
    impl_ = std::make_shared<GaussianBarrier>(spec_.E0, curvature_matrix(spec_.lambda, Q));
    radial_ = all_equal(spec_.lambda);
    support_radius_ = length_scale_ * std::sqrt(2.0 * std::log(1e17));
  } else if (f == "rational") {
    const double p = spec_.param("power", spec_.rho / 2.0);
    if (!(2 * p > 1)) throw ConfigError("rational barrier needs power > 1/2 (short range)");
    spec_.rho = 2 * p;
    impl_ = std::make_shared<RationalBarrier>(spec_.E0, curvature_matrix(spec_.lambda, Q), p);
    radial_ = all_equal(spec_.lambda);
    support_radius_ = 12.0 * length_scale_;
  } else if (f == "eckart") {
    if (n != 1) throw ConfigError("eckart barrier is one-dimensional");
    impl_ = std::make_shared<EckartBarrier>(spec_.E0, spec_.lambda[0]);
    radial_ = true;
    const double a = spec_.lambda[0] / std::sqrt(2 * spec_.E0);
    support_radius_ = std::log(4e17) / (2 * a);
  } else if (f == "quadratic" || f == "truncated_quadratic") {
    const bool trunc = f == "truncated_quadratic";
    impl_ = std::make_shared<QuadraticBarrier>(spec_.E0, curvature_matrix(spec_.lambda, Q), trunc);
    radial_ = all_equal(spec_.lambda);
    short_range_ = trunc;
    std::vector<double> sorted = spec_.lambda;
    std::sort(sorted.begin(), sorted.end());
    support_radius_ = trunc ? std::sqrt(2 * spec_.E0) / sorted.front() : 1e300;
  } else if (f == "double_bump") {
    const double d = spec_.param("offset", 3.0 * length_scale_);
    Vec c = Vec::Zero(n);
    c[0] = d;
    const double w = spec_.param("width", 0.5 * length_scale_);
    const double H = spec_.param("height", 1.2) * spec_.E0;
    impl_ = std::make_shared<DoubleBump>(n, spec_.E0, spec_.lambda[0], c, H, w);
    spec_.lambda.assign(static_cast<std::size_t>(n), spec_.lambda[0]);
    support_radius_ = d + 10 * std::max(w, length_scale_);
  } else if (f == "gaussian_well") {
    const double W = spec_.param("depth", 0.5), s = spec_.param("width", 1.0);
    impl_ = std::make_shared<GaussianWell>(n, W, s);
    radial_ = true;
    support_radius_ = s * std::sqrt(2.0 * std::log(std::max(W, 1e-300) * 1e17));
  } else if (f == "harmonic") {
    impl_ = std::make_shared<HarmonicWell>(n, spec_.param("omega", 1.0));
    radial_ = true;
    short_range_ = false;
    support_radius_ = 1e300;
  } else {
    throw ConfigError("unknown model family '" + f + "'");
  }
}

std::uint64_t PotentialModel::hash() const {
  nlohmann::json j = spec_;
  return io::fnv1a64(j.dump());
}

std::string PotentialModel::hash_hex() const { return io::hex64(hash()); }

PotentialModel model_from_json(const nlohmann::json& j) {
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != kModelSchemaVersion)
    throw ConfigError("unsupported model schema_version");
  return PotentialModel(j.get<ModelSpec>());
}

PotentialModel model_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

PotentialModel make_free(int n) {
  ModelSpec s;
  s.family = "free";
  s.n = n;
  s.E0 = 0.0;
  s.lambda.clear();
  return PotentialModel(s);
}

PotentialModel make_gaussian(double E0, std::vector<double> lambda, double angle) {
  ModelSpec s;
  s.family = "gaussian";
  s.n = static_cast<int>(lambda.size());
  s.E0 = E0;
  s.lambda = std::move(lambda);
  if (angle != 0.0) s.params["angle"] = angle;
  return PotentialModel(s);
}

PotentialModel make_rational(double E0, std::vector<double> lambda, double power) {
  ModelSpec s;
  s.family = "rational";
  s.n = static_cast<int>(lambda.size());
  s.E0 = E0;
  s.lambda = std::move(lambda);
  s.params["power"] = power;
  s.rho = 2 * power;
  return PotentialModel(s);
}

PotentialModel make_eckart(double E0, double lambda) {
  ModelSpec s;
  s.family = "eckart";
  s.n = 1;
  s.E0 = E0;
  s.lambda = {lambda};
  return PotentialModel(s);
}

PotentialModel make_quadratic(double E0, std::vector<double> lambda, bool truncated) {
  ModelSpec s;
  s.family = truncated ? "truncated_quadratic" : "quadratic";
  s.n = static_cast<int>(lambda.size());
  s.E0 = E0;
  s.lambda = std::move(lambda);
  return PotentialModel(s);
}

PotentialModel make_double_bump(double E0, double lambda, double offset, double height, double width) {
  ModelSpec s;
  s.family = "double_bump";
  s.n = 2;
  s.E0 = E0;
  s.lambda = {lambda};
  s.params = {{"offset", offset}, {"height", height}, {"width", width}};
  return PotentialModel(s);
}

PotentialModel make_gaussian_well(int n, double depth, double width) {
  ModelSpec s;
  s.family = "gaussian_well";
  s.n = n;
  s.E0 = 0.0;
  s.lambda.clear();
  s.params = {{"depth", depth}, {"width", width}};
  return PotentialModel(s);
}

PotentialModel make_harmonic(int n, double omega) {
  ModelSpec s;
  s.family = "harmonic";
  s.n = n;
  s.E0 = 0.0;
  s.lambda.clear();
  s.params = {{"omega", omega}};
  return PotentialModel(s);
}

Evaluation evaluate(const PotentialModel& model, const Vec& x) {
  if (x.size() != model.dim()) throw DimensionError("evaluate: point dimension does not match model");
  if (!x.allFinite()) throw ModelEvaluationError("evaluate: non-finite point");
  Evaluation e{model.value(x), model.gradient(x), model.hessian(x)};
  if (!std::isfinite(e.value) || !e.gradient.allFinite() || !e.hessian.allFinite())
    throw ModelEvaluationError("evaluate: model produced a non-finite value");
  return e;
}

Linearization linearization(const PotentialModel& model) {
  const int n = model.dim();
  const Mat H = model.hessian(Vec::Zero(n));
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  const Vec ev = es.eigenvalues();  // ascending: most negative first
  if (ev.maxCoeff() >= 0.0) throw AssumptionViolation("Hess V(0) is not negative definite");
  // lambda_j^2 = -eigenvalue; ascending lambda means descending eigenvalue.
  Linearization lin;
  lin.lambda.resize(n);
  lin.axes.resize(n, n);
  for (int j = 0; j < n; ++j) {
    const int src = n - 1 - j;
    lin.lambda[j] = std::sqrt(-ev[src]);
    Vec v = es.eigenvectors().col(src);
    // Deterministic orientation: largest component positive.
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    lin.axes.col(j) = v;
  }
  lin.field = Mat::Zero(2 * n, 2 * n);
  lin.field.topRightCorner(n, n).setIdentity();
  lin.field.bottomLeftCorner(n, n) = lin.lambda.array().square().matrix().asDiagonal();
  lin.field_ambient = Mat::Zero(2 * n, 2 * n);
  lin.field_ambient.topRightCorner(n, n).setIdentity();
  lin.field_ambient.bottomLeftCorner(n, n) = -H;
  return lin;
}

namespace {

// Weighted derivative magnitudes |d^a V| <x>^(rho+|a|) for |a| = 0, 1, 2.
std::array<double, 3> weighted_derivatives(const PotentialModel& m, const Vec& x) {
  const double jap = std::sqrt(1.0 + x.squaredNorm());
  const double r = m.rho();
  return {std::abs(m.value(x)) * std::pow(jap, r), m.gradient(x).norm() * std::pow(jap, r + 1),
          m.hessian(x).norm() * std::pow(jap, r + 2)};
}

}  // namespace

ValidationReport validate_assumptions(const PotentialModel& model, const ValidationGrid& grid_in) {
  ValidationReport rep;
  const int n = model.dim();
  const double L = model.length_scale();
  ValidationGrid grid = grid_in;
  if (grid.ball_radius <= 0) grid.ball_radius = 4.0 * L;
  if (grid.far_radius <= 0) grid.far_radius = 10.0 * L;
  if (grid.escape_radius <= 0) grid.escape_radius = 20.0 * L;
  const Vec origin = Vec::Zero(n);
  const double E0 = model.E0();

  // (A1), local part.
  {
    const double v0 = model.value(origin);
    const double g0 = model.gradient(origin).norm();
    bool neg_def = false;
    double lambda1 = 0.0;
    try {
      const auto lin = linearization(model);
      neg_def = true;
      lambda1 = lin.lambda[0];
    } catch (const AssumptionViolation&) {
    }
    rep.max_at_origin = E0 > 0 && std::abs(v0 - E0) <= 1e-9 * E0 && g0 <= 1e-9 * std::max(E0, 1.0) / L && neg_def;
    if (!rep.max_at_origin) rep.messages.push_back("(A1): no non-degenerate maximum V(0)=E0>0 at the origin");
    if (grid.horizon <= 0) grid.horizon = lambda1 > 0 ? 200.0 / lambda1 : 200.0;
  }

  std::mt19937_64 rng(grid.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto random_direction = [&] {
    Vec d(n);
    for (int i = 0; i < n; ++i) d[i] = normal(rng);
    return Vec(d / d.norm());
  };

  // Unique maximum: no sampled point away from the origin reaches E0.
  {
    double best = -1e300;
    Vec arg = origin;
    const double excl = 0.02 * grid.ball_radius;
    auto visit = [&](const Vec& x) {
      if (x.norm() < excl) return;
      const double v = model.value(x);
      if (v > best) {
        best = v;
        arg = x;
      }
    };
    if (n <= 2) {
      const int m = grid.points_per_axis;
      std::vector<int> idx(n, 0);
      const int total = static_cast<int>(std::pow(m, n));
      for (int k = 0; k < total; ++k) {
        int r = k;
        Vec x(n);
        for (int d = 0; d < n; ++d) {
          const int i = r % m;
          r /= m;
          x[d] = -grid.ball_radius + 2.0 * grid.ball_radius * i / (m - 1);
        }
        visit(x);
      }
    } else {
      for (int k = 0; k < 20000; ++k) visit(random_direction() * grid.ball_radius * std::pow(unif(rng), 1.0 / n));
    }
    for (int k = 0; k < grid.far_samples; ++k)
      visit(random_direction() * grid.far_radius * (1.0 + 3.0 * unif(rng)));
    rep.unique_max = E0 > 0 && best < E0;
    if (!rep.unique_max) {
      rep.messages.push_back("unique-maximum check failed: V=" + io::fmt(best) + " at |x|=" + io::fmt(arg.norm()));
    }
  }

  // Sampled decay bounds: weighted derivatives on an outer shell must stay
  // below those of an inner shell (no growth) and below the ball supremum scale.
  {
    std::array<double, 3> inner{}, outer{}, ball{};
    for (int k = 0; k < grid.far_samples; ++k) {
      const Vec d = random_direction();
      const auto wi = weighted_derivatives(model, d * grid.far_radius * (1.0 + unif(rng)));
      const auto wo = weighted_derivatives(model, d * grid.far_radius * (2.0 + 2.0 * unif(rng)));
      const auto wb = weighted_derivatives(model, d * grid.ball_radius * unif(rng));
      for (int a = 0; a < 3; ++a) {
        inner[a] = std::max(inner[a], wi[a]);
        outer[a] = std::max(outer[a], wo[a]);
        ball[a] = std::max(ball[a], wb[a]);
      }
    }
    rep.decay_sup_inner = inner;
    rep.decay_sup_outer = outer;
    bool ok = model.short_range() && model.rho() > 1.0;
    for (int a = 0; a < 3; ++a) {
      const double C = 10.0 * std::max(ball[a], 1e-300) + 1e-300;
      ok = ok && outer[a] <= C && inner[a] <= C && outer[a] <= 2.0 * inner[a] + 1e-12 * C;
    }
    rep.decay_ok = ok;
    if (!ok) rep.messages.push_back("decay bound |d^a V| <= C <x>^(-rho-|a|) not satisfied on samples");
  }

  // Trapped-set probe at energy E0.
  if (E0 > 0) {
    FlowOptions fo;
    fo.abs_tol = fo.rel_tol = 1e-10;
    for (int k = 0; k < grid.trapped_probes; ++k) {
      Vec x;
      double kinetic = -1;
      for (int tries = 0; tries < 1000 && kinetic <= 0; ++tries) {
        x = random_direction() * grid.ball_radius * std::pow(unif(rng), 1.0 / n);
        kinetic = E0 - model.value(x);
      }
      if (kinetic <= 0) continue;
      const PhasePoint p(x, random_direction() * std::sqrt(2 * kinetic));
      ++rep.probes_run;
      bool flagged = false;
      for (double dir : {1.0, -1.0}) {
        try {
          const auto out = escape_time(model, p, grid.escape_radius, dir * grid.horizon, fo, 1e-6);
          if (out.kind == EscapeKind::undecided) flagged = true;
        } catch (const IntegrationFailure&) {
          flagged = true;
        }
      }
      if (flagged) ++rep.probes_flagged;
    }
    rep.trapped_probe_ok = rep.probes_run > 0 && rep.probes_flagged == 0;
    if (!rep.trapped_probe_ok)
      rep.messages.push_back("(A2) probe: " + std::to_string(rep.probes_flagged) + " of " +
                             std::to_string(rep.probes_run) + " samples neither escaped nor converged");
  } else {
    rep.messages.push_back("(A2) probe skipped: no positive barrier energy");
  }
  return rep;
}

}  // namespace critscat
