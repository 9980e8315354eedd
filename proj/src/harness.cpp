#include "critscat/harness.hpp"

#include "critscat/amplitude.hpp"
#include "critscat/io.hpp"
#include "critscat/manifolds.hpp"
#include "critscat/quantum.hpp"
#include "critscat/symplectic.hpp"

#include <boost/version.hpp>
#include <fftw3.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <numbers>
#include <random>
#include <thread>

namespace critscat {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------ parsing helpers

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(std::string("'") + key + "' must be an object");
  return j.at(key);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("'") + key + "' has the wrong type");
  }
}

template <class T>
T require(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing required parameter '") + key + "'");
  return get_or<T>(j, key, T{});
}

Vec vec_param(const json& j, const char* key, int n) {
  const auto v = require<std::vector<double>>(j, key);
  if (static_cast<int>(v.size()) != n)
    throw ConfigError(std::string("'") + key + "' must have " + std::to_string(n) + " entries");
  return Eigen::Map<const Vec>(v.data(), n);
}

std::vector<double> number_list(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing required parameter '") + key + "'");
  const json& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  return get_or<std::vector<double>>(j, key, {});
}

// Either an explicit list under `key` or {"lo", "hi", "count"} under key_grid.
std::vector<double> grid_or_list(const json& j, const std::string& key) {
  const std::string gk = key + "_grid";
  if (j.contains(gk)) {
    const json& g = j.at(gk);
    if (!g.is_object()) throw ConfigError("'" + gk + "' must be an object");
    const double lo = require<double>(g, "lo"), hi = require<double>(g, "hi");
    const int count = require<int>(g, "count");
    if (count < 1) throw ConfigError("'" + gk + ".count' must be >= 1");
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(count == 1 ? lo : lo + (hi - lo) * i / (count - 1));
    return out;
  }
  return number_list(j, key.c_str());
}

Vec unit_from_angle(double a) {
  Vec v(2);
  v << std::cos(a), std::sin(a);
  return v;
}

// Direction given as a vector `key` or, in 2D, as an angle `key_angle`.
Vec direction_param(const json& j, const std::string& key, int n) {
  const std::string ak = key + "_angle";
  if (j.contains(ak)) {
    if (n != 2) throw ConfigError("'" + ak + "' is only meaningful for n = 2");
    return unit_from_angle(require<double>(j, ak.c_str()));
  }
  Vec v = vec_param(j, key.c_str(), n);
  if (!(v.norm() > 0)) throw ConfigError("'" + key + "' must be nonzero");
  return v.normalized();
}

// Worker pool over independent items; results land at their own index so
// the output order does not depend on scheduling.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next++) < count;) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ------------------------------------------------------------------ context

struct Context {
  json config;
  json params;
  std::string operation;
  PotentialModel model;
  std::optional<double> E;
  std::optional<double> h;
  std::uint64_t seed = 0;
  double tol_scale = 1.0;
  FlowOptions flow;
  int jobs = 1;
  fs::path out;
  fs::path base;

  std::vector<std::pair<std::string, std::string>> pending;  // name, contents
  std::vector<std::string> outputs;
  std::vector<std::string> failures;

  double energy() const {
    if (!E) throw ConfigError("operation '" + operation + "' needs an energy ('E', or 'E1' with 'h')");
    return *E;
  }
  double hbar() const {
    if (!h) throw ConfigError("operation '" + operation + "' needs 'h'");
    return *h;
  }
  // Outputs are staged in memory and written together at the end so that a
  // failing run leaves no partial files behind.
  void stage(const std::string& name, std::string contents) { pending.emplace_back(name, std::move(contents)); }
  void flush() {
    for (auto& [name, contents] : pending) {
      io::atomic_write(out / name, contents);
      outputs.push_back(name);
    }
    pending.clear();
  }
  // For writers that produce files themselves; called at the end of a run.
  void record(const std::string& name) { outputs.push_back(name); }
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::vector<std::string> axis_names(const std::string& stem, int n) {
  std::vector<std::string> out;
  for (int a = 1; a <= n; ++a) out.push_back(stem + std::to_string(a));
  return out;
}

// ---------------------------------------------------------------- operations

void op_validate_model(Context& c) {
  const auto rep = validate_assumptions(c.model);
  json j = {{"model", c.model.spec()},
            {"model_hash", c.model.hash_hex()},
            {"max_at_origin", rep.max_at_origin},
            {"decay_ok", rep.decay_ok},
            {"unique_max", rep.unique_max},
            {"trapped_probe_ok", rep.trapped_probe_ok},
            {"probes_run", rep.probes_run},
            {"probes_flagged", rep.probes_flagged},
            {"decay_sup_inner", rep.decay_sup_inner},
            {"decay_sup_outer", rep.decay_sup_outer},
            {"messages", rep.messages},
            {"all_passed", rep.all_passed()}};
  c.stage("validation.json", dump(j));
  c.flush();
}

void op_flow(Context& c) {
  const int n = c.model.dim();
  const double T = require<double>(c.params, "t");
  const bool variational = get_or<bool>(c.params, "variational", true);
  const int samples = get_or<int>(c.params, "samples", 0);
  std::vector<PhasePoint> starts;
  if (c.params.contains("initial")) {
    for (const auto& row : c.params.at("initial")) {
      std::vector<double> v;
      try {
        v = row.get<std::vector<double>>();
      } catch (const json::exception&) {
        throw ConfigError("'initial' rows must be numeric arrays");
      }
      if (static_cast<int>(v.size()) != 2 * n) throw ConfigError("'initial' rows need 2n entries (x, xi)");
      Vec p = Eigen::Map<const Vec>(v.data(), 2 * n);
      starts.push_back(PhasePoint::unpack(p));
    }
  } else if (c.params.contains("random")) {
    const json& r = section(c.params, "random");
    const int count = require<int>(r, "count");
    const double radius = get_or<double>(r, "radius", 1.0) * c.model.length_scale();
    const double spread = get_or<double>(r, "energy_spread", 0.2);
    const double E0 = c.E ? *c.E : c.model.E0();
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    while (static_cast<int>(starts.size()) < count) {
      Vec x(n), d(n);
      for (int a = 0; a < n; ++a) x[a] = radius * U(rng);
      for (int a = 0; a < n; ++a) d[a] = U(rng);
      const double Et = E0 + spread * U(rng);
      const double kin = Et - c.model.value(x);
      if (kin <= 0 || d.norm() == 0) continue;
      starts.emplace_back(x, std::sqrt(2 * kin) * d.normalized());
    }
  } else {
    throw ConfigError("flow needs 'initial' or 'random'");
  }

  struct Item {
    TrajectorySegment seg;
    double defect = 0.0;
    std::string status = "ok";
  };
  std::vector<Item> items(starts.size());
  std::vector<double> times;
  for (int i = 0; i < samples; ++i) times.push_back(T * (i + 1) / samples);
  parallel_for(starts.size(), c.jobs, [&](std::size_t i) {
    try {
      items[i].seg = trajectory(c.model, starts[i], T, c.flow, variational, times);
      if (variational && !items[i].seg.samples.empty()) {
        for (const auto& s : items[i].seg.samples)
          if (s.M.size()) items[i].defect = std::max(items[i].defect, symplectic_defect(s.M));
      }
    } catch (const Error& e) {
      items[i].status = e.kind() + ": " + e.what();
    }
  });
  io::CsvTable summary({"index", "energy", "max_energy_drift", "symplectic_defect", "accepted", "rejected", "status"});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    summary.add_row({std::to_string(i), io::fmt(it.seg.energy), io::fmt(it.seg.max_energy_drift), io::fmt(it.defect),
                     std::to_string(it.seg.accepted), std::to_string(it.seg.rejected), it.status});
    if (it.status != "ok") c.failures.push_back("trajectory " + std::to_string(i) + ": " + it.status);
  }
  c.stage("flow_summary.csv", summary.str());
  c.flush();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].status != "ok") continue;
    char name[32];
    std::snprintf(name, sizeof name, "traj_%04zu.csv", i);
    write_trajectory((c.out / name).string(), c.model, items[i].seg);
    c.record(name);
    c.record(fs::path(name).replace_extension(".json").string());
  }
}

ManifoldOptions manifold_options(const Context& c) {
  ManifoldOptions o;
  const json& p = c.params;
  o.eps = get_or<double>(p, "eps", o.eps);
  o.seed_depth = get_or<double>(p, "seed_depth", o.seed_depth);
  o.R_patch = get_or<double>(p, "R_patch", o.R_patch);
  o.mesh = get_or<double>(p, "mesh", o.mesh);
  o.resolution = get_or<int>(p, "resolution", o.resolution);
  o.max_refine = get_or<int>(p, "max_refine", o.max_refine);
  o.rel_tol *= c.tol_scale;
  o.scatter.flow = c.flow;
  return o;
}

std::vector<ManifoldSide> sides_param(const json& p) {
  const auto s = get_or<std::string>(p, "side", "both");
  if (s == "plus") return {ManifoldSide::plus};
  if (s == "minus") return {ManifoldSide::minus};
  if (s == "both") return {ManifoldSide::plus, ManifoldSide::minus};
  throw ConfigError("'side' must be plus, minus or both");
}

void op_manifold(Context& c) {
  const auto sides = sides_param(c.params);
  const auto o = manifold_options(c);
  const bool trace = get_or<bool>(c.params, "trace", false);
  std::vector<ManifoldPatch> patches;
  std::vector<std::string> traces;
  for (auto side : sides) {
    patches.push_back(sample_manifold(c.model, side, o));
    if (trace) {
      const auto tr = spherical_trace(c.model, patches.back());
      const int n = c.model.dim();
      auto header = axis_names("direction", n);
      for (auto& s : axis_names("cotangent", n)) header.push_back(s);
      header.push_back("trajectory");
      io::CsvTable t(header);
      for (const auto& p : tr.points) {
        std::vector<double> row(p.direction.data(), p.direction.data() + n);
        row.insert(row.end(), p.cotangent.data(), p.cotangent.data() + n);
        row.push_back(p.trajectory);
        t.add_numeric_row(row);
      }
      traces.push_back(t.str());
    }
  }
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const std::string stem = "manifold_" + to_string(patches[i].side);
    write_patch((c.out / (stem + ".json")).string(), (c.out / (stem + ".csv")).string(), c.model, patches[i]);
    c.record(stem + ".json");
    c.record(stem + ".csv");
    if (trace) c.stage("trace_" + to_string(patches[i].side) + ".csv", traces[i]);
  }
  c.flush();
}

std::vector<Vec> impact_list(const Context& c, const Vec& omega) {
  const int n = c.model.dim();
  std::vector<Vec> out;
  const Mat B = impact_basis(omega);
  if (c.params.contains("z") && c.params.at("z").is_array() && !c.params.at("z").empty() &&
      c.params.at("z").front().is_array()) {
    for (const auto& row : c.params.at("z")) {
      const auto v = row.get<std::vector<double>>();
      if (static_cast<int>(v.size()) != n - 1) throw ConfigError("'z' rows need n-1 impact-basis coordinates");
      out.push_back(B * Eigen::Map<const Vec>(v.data(), n - 1));
    }
    return out;
  }
  if (n != 2) throw ConfigError("scalar impact parameters need n = 2; give 'z' as rows of n-1 coordinates");
  for (double z : grid_or_list(c.params, "z")) out.push_back(z * B.col(0));
  return out;
}

void op_scatter(Context& c) {
  const int n = c.model.dim();
  if (n < 2) throw ConfigError("scatter needs n >= 2");
  const double E = c.energy();
  std::vector<Vec> omegas;
  if (c.params.contains("omega_angles")) {
    if (n != 2) throw ConfigError("'omega_angles' needs n = 2");
    for (double a : number_list(c.params, "omega_angles")) omegas.push_back(unit_from_angle(a));
  } else {
    omegas.push_back(direction_param(c.params, "omega", n));
  }
  std::vector<std::pair<Vec, Vec>> grid;
  for (const Vec& w : omegas)
    for (const Vec& z : impact_list(c, w)) grid.emplace_back(w, z);

  AmplitudeOptions ao;
  ao.scatter.flow = c.flow;
  std::vector<RelationRow> rows(grid.size());
  std::vector<Vec> zplus(grid.size());
  parallel_for(grid.size(), c.jobs, [&](std::size_t i) {
    rows[i] = scattering_relation_table(c.model, E, {grid[i]}, ao).front();
  });
  auto header = axis_names("omega", n);
  for (auto& s : axis_names("z_minus", n)) header.push_back(s);
  for (auto& s : axis_names("theta", n)) header.push_back(s);
  for (auto& s : axis_names("z_plus", n)) header.push_back(s);
  header.push_back("status");
  io::CsvTable t(header);
  const double speed = std::sqrt(2 * E);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::vector<std::string> cells;
    for (int a = 0; a < n; ++a) cells.push_back(io::fmt(r.omega[a]));
    for (int a = 0; a < n; ++a) cells.push_back(io::fmt(grid[i].second[a]));
    for (int a = 0; a < n; ++a) cells.push_back(io::fmt(r.theta[a]));
    for (int a = 0; a < n; ++a) cells.push_back(io::fmt(-r.eta_plus[a] / speed));
    cells.push_back(r.status);
    t.add_row(cells);
    if (r.status != "ok" && r.status != "captured")
      c.failures.push_back("row " + std::to_string(i) + ": " + r.status);
  }
  c.stage("scatter.csv", t.str());
  c.flush();
}

void op_amplitude(Context& c) {
  const int n = c.model.dim();
  if (n < 2) throw ConfigError("amplitude needs n >= 2");
  const double E = c.energy();
  const Vec omega = direction_param(c.params, "omega", n);
  const Vec theta = direction_param(c.params, "theta", n);
  std::vector<double> hs = c.params.contains("h") ? number_list(c.params, "h") : std::vector<double>{c.hbar()};
  const bool oracle = get_or<bool>(c.params, "oracle", false);
  if (oracle && !(n == 2 && c.model.radial())) throw ConfigError("the partial-wave oracle needs a radial 2D model");
  AmplitudeOptions ao;
  ao.scatter.flow = c.flow.scaled(1e-2);
  ao.scatter.flow.energy_drift_tol = c.flow.energy_drift_tol * 1e-2;
  ao.starts = get_or<int>(c.params, "starts", ao.starts);
  ao.R_impact = get_or<double>(c.params, "R_impact", ao.R_impact);
  ao.seed = c.seed;

  const AmplitudeResult base = semiclassical_leading_amplitude(c.model, omega, theta, E, hs.front(), ao);
  const double conv = std::pow(2 * E, n / 4.0);
  std::vector<double> fpw(hs.size(), std::numeric_limits<double>::quiet_NaN());
  if (oracle) {
    const double ang = std::atan2(omega[0] * theta[1] - omega[1] * theta[0], omega.dot(theta));
    parallel_for(hs.size(), c.jobs, [&](std::size_t i) {
      fpw[i] = std::abs(partial_wave_amplitude(c.model, E, hs[i], {ang}).f.front());
    });
  }
  json rows = json::array();
  io::CsvTable t({"h", "A_re", "A_im", "A_abs", "f_semiclassical", "f_partial_wave", "relative_error"});
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const cplx A = assemble(base.branches, hs[i]);
    const double fsc = conv * std::abs(A);
    const double rel = oracle ? std::abs(fsc - fpw[i]) / fpw[i] : std::numeric_limits<double>::quiet_NaN();
    t.add_numeric_row({hs[i], A.real(), A.imag(), std::abs(A), fsc, fpw[i], rel});
    json r = {{"h", hs[i]}, {"A", {{"re", A.real()}, {"im", A.imag()}}}, {"abs_A", std::abs(A)},
              {"abs_f_semiclassical", fsc}};
    if (oracle) {
      r["abs_f_partial_wave"] = fpw[i];
      r["relative_error"] = rel;
    }
    rows.push_back(r);
  }
  json j = to_json(base);
  j["per_h"] = rows;
  j["conversion_factor"] = conv;
  c.stage("amplitude.json", dump(j));
  c.stage("amplitude.csv", t.str());
  for (const auto& w : base.warnings) c.failures.push_back("warning: " + w);
  c.flush();
}

void op_oracle1d(Context& c) {
  if (c.model.dim() != 1) throw ConfigError("oracle1d needs a 1D model");
  const double h = c.params.contains("h") ? get_or<double>(c.params, "h", 0.0) : c.hbar();
  if (!(h > 0)) throw ConfigError("'h' must be positive");
  std::vector<double> Es, E1s;
  if (c.params.contains("E1") || c.params.contains("E1_grid")) {
    E1s = grid_or_list(c.params, "E1");
    for (double e1 : E1s) Es.push_back(c.model.E0() + h * e1);
  } else if (c.params.contains("E") || c.params.contains("E_grid")) {
    Es = grid_or_list(c.params, "E");
  } else {
    Es = {c.energy()};
  }
  NumerovOptions no;
  no.points_per_wavelength = get_or<double>(c.params, "points_per_wavelength", no.points_per_wavelength);
  std::vector<Transmission1D> res(Es.size());
  std::vector<std::string> status(Es.size(), "ok");
  parallel_for(Es.size(), c.jobs, [&](std::size_t i) {
    try {
      res[i] = numerov_scattering_1d(c.model, Es[i], h, no);
    } catch (const ResolutionError& e) {
      status[i] = std::string("resolution: ") + e.what();
    }
  });
  io::CsvTable t({"E", "E1", "T_re", "T_im", "R_re", "R_im", "T2", "R2", "unitarity_defect", "convergence",
                  "barrier_top_T2", "status"});
  const double lam = c.model.lambda().empty() ? 0.0 : c.model.lambda().front();
  for (std::size_t i = 0; i < Es.size(); ++i) {
    const auto& r = res[i];
    const double e1 = E1s.empty() ? (Es[i] - c.model.E0()) / h : E1s[i];
    const double top = lam > 0 ? barrier_top_transmission(e1, lam) : std::numeric_limits<double>::quiet_NaN();
    t.add_row({io::fmt(Es[i]), io::fmt(e1), io::fmt(r.T.real()), io::fmt(r.T.imag()), io::fmt(r.R.real()),
               io::fmt(r.R.imag()), io::fmt(std::norm(r.T)), io::fmt(std::norm(r.R)), io::fmt(r.unitarity_defect),
               io::fmt(r.convergence), io::fmt(top), status[i]});
    if (status[i] != "ok") c.failures.push_back("E = " + io::fmt(Es[i]) + ": " + status[i]);
  }
  c.stage("oracle1d.csv", t.str());
  c.flush();
}

void op_oracle2d(Context& c) {
  if (c.model.dim() != 2 || !c.model.radial()) throw ConfigError("oracle2d needs a radial 2D model");
  const double E = c.energy();
  const double h = c.params.contains("h") ? get_or<double>(c.params, "h", 0.0) : c.hbar();
  if (!(h > 0)) throw ConfigError("'h' must be positive");
  std::vector<double> theta;
  if (c.params.contains("theta") || c.params.contains("theta_grid")) {
    theta = grid_or_list(c.params, "theta");
  } else {
    for (int i = 0; i < 360; ++i) theta.push_back(2 * std::numbers::pi * i / 360);
  }
  PartialWaveOptions po;
  po.m_max = get_or<int>(c.params, "m_max", po.m_max);
  const auto r = partial_wave_amplitude(c.model, E, h, theta, po);
  io::CsvTable t({"theta", "f_re", "f_im", "f_abs"});
  for (std::size_t i = 0; i < theta.size(); ++i)
    t.add_numeric_row({theta[i], r.f[i].real(), r.f[i].imag(), std::abs(r.f[i])});
  json j = {{"E", E},
            {"h", h},
            {"k", r.k},
            {"m_cut", r.m_cut},
            {"r_match", r.r_match},
            {"truncation_change", r.truncation_change},
            {"sigma_total", r.sigma_total},
            {"optical_defect", r.optical_defect},
            {"phase_shifts", r.delta},
            {"convention", "psi ~ e^{ikx} + f e^{ikr}/sqrt(r); f = sqrt(2/(pi k)) e^{i pi/4} sum e^{i d_m} sin d_m e^{i m theta}"}};
  c.stage("oracle2d.csv", t.str());
  c.stage("oracle2d.json", dump(j));
  c.flush();
}

GridSpec grid_param(const json& p, int n) {
  const json& g = section(p, "grid");
  const auto N = require<std::vector<int>>(g, "N");
  const auto lo = require<std::vector<double>>(g, "lo");
  const auto hi = require<std::vector<double>>(g, "hi");
  if (static_cast<int>(N.size()) != n) throw ConfigError("grid dimension differs from the model");
  try {
    return make_grid(N, lo, hi);
  } catch (const GridError& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

void op_husimi(Context& c) {
  const int n = c.model.dim();
  if (n > 2) throw ConfigError("grid propagation supports n <= 2");
  const double h = c.params.contains("h") ? get_or<double>(c.params, "h", 0.0) : c.hbar();
  const GridSpec grid = grid_param(c.params, n);
  const Vec x0 = vec_param(c.params, "x0", n), xi0 = vec_param(c.params, "xi0", n);
  const double T = get_or<double>(c.params, "t", 0.0);
  PropagationOptions po;
  po.dt = get_or<double>(c.params, "dt", po.dt);
  po.absorb_width = get_or<double>(c.params, "absorb_width", 0.0);
  po.check_halving = get_or<bool>(c.params, "check_halving", false);
  const json& wj = section(c.params, "window");
  HusimiWindow w;
  w.x_lo = wj.contains("x_lo") ? vec_param(wj, "x_lo", n) : Eigen::Map<const Vec>(grid.lo.data(), n);
  w.x_hi = wj.contains("x_hi") ? vec_param(wj, "x_hi", n) : Eigen::Map<const Vec>(grid.hi.data(), n);
  w.x_step = get_or<double>(wj, "x_step", 0.0);
  w.xi_max = get_or<double>(wj, "xi_max", w.xi_max);
  const auto patch_side = get_or<std::string>(c.params, "patch", "");
  if (!patch_side.empty() && patch_side != "plus" && patch_side != "minus")
    throw ConfigError("'patch' must be plus or minus");
  const double delta = get_or<double>(c.params, "delta", 5.0) * std::sqrt(h);
  const double r_min = get_or<double>(c.params, "r_min", 0.0);
  const double threshold = get_or<double>(c.params, "csv_threshold", 1e-8);

  GridState s0 = coherent_state(x0, xi0, h, grid);
  PropagationReport rep;
  GridState s = T != 0.0 ? propagate(s0, c.model, T, po, &rep) : s0;
  const HusimiField f = husimi_wavefront(s, w);
  json j = {{"h", h},
            {"t", s.t},
            {"norm2", s.norm2()},
            {"absorbed", s.absorbed},
            {"husimi_total", f.total()},
            {"steps", rep.steps},
            {"norm_drift", rep.norm_drift},
            {"halving_change", rep.halving_change}};
  if (!patch_side.empty()) {
    ManifoldOptions mo = manifold_options(c);
    const auto patch =
        sample_manifold(c.model, patch_side == "plus" ? ManifoldSide::plus : ManifoldSide::minus, mo);
    const auto m = mass_near(s, patch, delta, w, r_min);
    j["mass_near"] = {{"side", patch_side}, {"delta", delta}, {"r_min", r_min}, {"total", m.total},
                      {"in_region", m.in_region}, {"near", m.near}, {"fraction", m.fraction()}};
  }
  c.stage("husimi.json", dump(j));
  c.flush();
  write_husimi_csv((c.out / "husimi.csv").string(), f, threshold);
  c.record("husimi.csv");
  write_snapshot((c.out / "state.scgs").string(), s);
  c.record("state.scgs");
}

void op_verify(Context& c) {
  const int n = c.model.dim();
  const auto configuration = get_or<std::string>(c.params, "configuration", "both");
  if (configuration != "graph" && configuration != "flowout" && configuration != "both")
    throw ConfigError("'configuration' must be graph, flowout or both");
  const int samples = get_or<int>(c.params, "samples", 20);
  const double tmax = get_or<double>(c.params, "t", 2.0);
  const auto o = manifold_options(c);
  const auto plus = sample_manifold(c.model, ManifoldSide::plus, o);
  const auto minus = sample_manifold(c.model, ManifoldSide::minus, o);
  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<std::size_t> pick_p(0, plus.samples.size() - 1), pick_m(0, minus.samples.size() - 1);
  std::uniform_real_distribution<double> U(-tmax, tmax);

  json audit = json::array();
  io::CsvTable t({"configuration", "sample", "e", "dim_Y", "dim_Z", "dim_intersection", "status"});
  auto run_one = [&](const std::string& name, int k) {
    const auto& sp = plus.samples[pick_p(rng)];
    const auto& sm = minus.samples[pick_m(rng)];
    const double tt = U(rng);
    json entry = {{"configuration", name}, {"sample", k}, {"t", tt}};
    try {
      TangentFrame Y, Z;
      const TangentFrame LpLm = product_frame(manifold_frame(sp), manifold_frame(sm));
      if (name == "graph") {
        const auto vf = flow_with_variational(c.model, sp.rho, tt, c.flow);
        Y = product_frame(graph_frame(vf.point, sp.rho, vf.M), LpLm);
        Z = diagonal_frame(vf.point, sp.rho, sm.rho);
      } else {
        // (rho+, rho-) x (rho-, exp(-t H_p) rho-)
        const PhasePoint back = flow(c.model, sm.rho, -tt, c.flow);
        Y = product_frame(LpLm, flowout_frame(c.model, back, tt, c.flow));
        Z = diagonal_frame(sp.rho, sm.rho, back);
      }
      const auto r = clean_intersection_excess(Y, Z, 1e-6);
      entry["report"] = to_json(r);
      t.add_row({name, std::to_string(k), std::to_string(r.e), std::to_string(r.dim_Y), std::to_string(r.dim_Z),
                 std::to_string(r.dim_intersection), "ok"});
    } catch (const Error& e) {
      entry["error"] = e.kind() + ": " + e.what();
      t.add_row({name, std::to_string(k), "", "", "", "", e.kind()});
      c.failures.push_back(name + " sample " + std::to_string(k) + ": " + e.kind());
    }
    audit.push_back(entry);
  };
  for (int k = 0; k < samples; ++k) {
    if (configuration != "flowout") run_one("graph", k);
    if (configuration != "graph") run_one("flowout", k);
  }
  (void)n;
  c.stage("verify.json", dump(json{{"samples", audit}, {"connectedness_checked", false}}));
  c.stage("verify.csv", t.str());
  c.flush();
}

const std::map<std::string, void (*)(Context&)>& operations() {
  static const std::map<std::string, void (*)(Context&)> ops = {
      {"flow", op_flow},           {"manifold", op_manifold}, {"scatter", op_scatter},
      {"amplitude", op_amplitude}, {"oracle1d", op_oracle1d}, {"oracle2d", op_oracle2d},
      {"husimi", op_husimi},       {"verify", op_verify},     {"validate-model", op_validate_model}};
  return ops;
}

Context build_context(const json& config, const RunOverrides& ov) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  Context c;
  c.config = config;
  c.base = ov.base_dir;
  // Values in the config file take precedence over command-line flags; the
  // flags only fill in what the config leaves open.
  c.operation = get_or<std::string>(config, "operation", ov.operation.value_or(""));
  if (ov.operation && *ov.operation != c.operation)
    throw ConfigError("subcommand '" + *ov.operation + "' conflicts with config operation '" + c.operation + "'");
  if (c.operation.empty()) throw ConfigError("no operation given");
  if (!operations().count(c.operation)) throw ConfigError("unknown operation '" + c.operation + "'");
  c.params = section(config, "params");

  if (config.contains("model_file")) {
    fs::path p = get_or<std::string>(config, "model_file", "");
    if (p.is_relative()) p = c.base / p;
    if (!fs::exists(p)) throw ConfigError("model_file not found: " + p.string());
    c.model = model_from_text(io::read_text(p));
  } else if (config.contains("model")) {
    c.model = model_from_json(config.at("model"));
  } else {
    throw ConfigError("config needs 'model' or 'model_file'");
  }

  if (config.contains("h")) c.h = get_or<double>(config, "h", 0.0);
  if (c.h && !(*c.h > 0)) throw ConfigError("'h' must be positive");
  if (config.contains("E")) {
    c.E = get_or<double>(config, "E", 0.0);
  } else if (config.contains("E1")) {
    if (!c.h) throw ConfigError("'E1' needs 'h'");
    c.E = c.model.E0() + *c.h * get_or<double>(config, "E1", 0.0);
  }
  if (c.E && !(*c.E > 0)) throw ConfigError("energy must be positive");

  c.seed = get_or<std::uint64_t>(config, "seed", ov.seed.value_or(0));
  c.tol_scale = get_or<double>(config, "tol_scale", ov.tol_scale.value_or(1.0));
  if (!(c.tol_scale > 0)) throw ConfigError("tol_scale must be positive");
  const json& tol = section(config, "tolerances");
  c.flow.abs_tol = get_or<double>(tol, "abs_tol", c.flow.abs_tol);
  c.flow.rel_tol = get_or<double>(tol, "rel_tol", c.flow.rel_tol);
  c.flow.energy_drift_tol = get_or<double>(tol, "energy_drift_tol", c.flow.energy_drift_tol);
  c.flow = c.flow.scaled(c.tol_scale);
  c.jobs = std::max(1, ov.jobs);

  if (config.contains("output")) {
    c.out = get_or<std::string>(config, "output", "");
    if (c.out.is_relative()) c.out = c.base / c.out;
  } else if (ov.out) {
    c.out = *ov.out;
  }
  if (c.out.empty()) throw ConfigError("no output directory ('output' or --out)");
  return c;
}

json library_versions() {
  return {{"critscat", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"fftw", std::string(fftw_version)},
          {"integrator", kIntegratorName}};
}

}  // namespace

RunResult run_experiment(const json& config, const RunOverrides& ov) {
  RunResult res;
  const auto t0 = std::chrono::steady_clock::now();
  Context c;
  try {
    c = build_context(config, ov);
  } catch (const ConfigError& e) {
    res.exit_code = kExitConfig;
    res.message = e.what();
    return res;
  } catch (const Error& e) {
    res.exit_code = kExitConfig;
    res.message = e.kind() + ": " + e.what();
    return res;
  }

  std::string status = "ok";
  try {
    operations().at(c.operation)(c);
    res.exit_code = c.failures.empty() ? kExitOk : kExitPartial;
    if (!c.failures.empty()) status = "partial";
    // Warnings alone do not make a run partial.
    bool only_warnings = !c.failures.empty();
    for (const auto& f : c.failures) only_warnings = only_warnings && f.rfind("warning:", 0) == 0;
    if (only_warnings) {
      res.exit_code = kExitOk;
      status = "ok-with-warnings";
    }
  } catch (const ConfigError& e) {
    if (c.outputs.empty()) {
      res.exit_code = kExitConfig;
      res.message = e.what();
      return res;
    }
    res.exit_code = kExitNumerical;
    status = "error";
    res.message = e.what();
  } catch (const Error& e) {
    res.exit_code = kExitNumerical;
    status = "error";
    res.message = e.kind() + ": " + e.what();
  } catch (const std::exception& e) {
    res.exit_code = kExitNumerical;
    status = "error";
    res.message = e.what();
  }

  json canonical = config;
  canonical["operation"] = c.operation;
  canonical["seed"] = c.seed;
  canonical["tol_scale"] = c.tol_scale;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.outputs = c.outputs;
  res.failures = c.failures;
  res.manifest = {{"operation", c.operation},
                  {"config_hash", io::hex64(io::fnv1a64(canonical.dump()))},
                  {"model_hash", c.model.hash_hex()},
                  {"seed", c.seed},
                  {"tol_scale", c.tol_scale},
                  {"jobs", c.jobs},
                  {"versions", library_versions()},
                  {"outputs", c.outputs},
                  {"failures", c.failures},
                  {"status", status},
                  {"exit_code", res.exit_code},
                  {"message", res.message},
                  {"wall_time_s", wall}};
  try {
    io::atomic_write(c.out / "manifest.json", dump(res.manifest));
  } catch (const Error& e) {
    res.exit_code = kExitNumerical;
    res.message += std::string(res.message.empty() ? "" : "; ") + e.what();
  }
  return res;
}

RunResult run_config_file(const fs::path& path, RunOverrides ov) {
  RunResult res;
  json config;
  try {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    config = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    res.exit_code = kExitConfig;
    res.message = std::string("config is not valid JSON: ") + e.what();
    return res;
  } catch (const Error& e) {
    res.exit_code = kExitConfig;
    res.message = e.what();
    return res;
  }
  if (ov.base_dir.empty()) ov.base_dir = path.parent_path();
  return run_experiment(config, ov);
}

}  // namespace critscat
