// critscat: one subcommand per experiment type, each driven by a JSON config.

#include "critscat/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"critical-energy scattering experiments"};
  app.set_version_flag("--version", std::string("critscat ") + critscat::kVersion);
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int jobs = 1;
  double tol_scale = 1.0;

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"flow", "integrate trajectories with variational data"},
      {"manifold", "sample the stable/unstable manifolds of the barrier top"},
      {"scatter", "classical scattering map over an impact-parameter grid"},
      {"amplitude", "semiclassical scattering amplitude, optionally against partial waves"},
      {"oracle1d", "1D Numerov transmission and reflection"},
      {"oracle2d", "2D radial partial-wave amplitude"},
      {"husimi", "coherent-state propagation and Husimi phase-space mass"},
      {"verify", "clean-intersection excess of composition configurations"},
      {"validate-model", "check the barrier assumptions of a model"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    s->add_option("--out", out, "output directory (used when the config has no 'output')");
    s->add_option("--seed", seed, "RNG seed (used when the config has no 'seed')");
    s->add_option("--jobs", jobs, "worker threads for parameter grids")->check(CLI::PositiveNumber);
    s->add_option("--tol-scale", tol_scale, "scale of integrator tolerances (used when the config has none)")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : critscat::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  critscat::RunOverrides ov;
  ov.operation = sub->get_name();
  if (sub->count("--out")) ov.out = out;
  if (sub->count("--seed")) ov.seed = seed;
  if (sub->count("--tol-scale")) ov.tol_scale = tol_scale;
  ov.jobs = jobs;

  const auto res = critscat::run_config_file(config, ov);
  if (!res.message.empty()) std::cerr << "critscat: " << res.message << "\n";
  for (const auto& f : res.failures) std::cerr << "  " << f << "\n";
  return res.exit_code;
}
