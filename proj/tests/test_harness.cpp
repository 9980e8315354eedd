#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "critscat/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace critscat;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("critscat_harness_" + name);
  fs::remove_all(p);
  return p;
}
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}
std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}
int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CRITSCAT_CLI + "\" " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}
fs::path write_config(const fs::path& dir, const json& j) {
  fs::create_directories(dir);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}
json free_scatter(const fs::path& out) {
  return {{"operation", "scatter"},
          {"model", {{"family", "free"}, {"n", 2}}},
          {"E", 0.7},
          {"output", out.string()},
          {"params", {{"omega_angles", {0.0, 1.1, -2.3}}, {"z", {0.0, 0.5, -1.2}}}}};
}
}  // namespace

TEST_CASE("scatter on the free model: theta equals omega, exit 0") {
  const fs::path dir = scratch("free");
  const fs::path cfg = write_config(dir, free_scatter(dir / "out"));
  REQUIRE(run_cli("scatter --config " + cfg.string()) == kExitOk);
  const auto rows = read_csv(dir / "out" / "scatter.csv");
  REQUIRE(rows.size() == 1 + 9);
  CHECK(rows[0][0] == "omega1");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    CHECK(std::abs(std::stod(r[4]) - std::stod(r[0])) < 1e-10);
    CHECK(std::abs(std::stod(r[5]) - std::stod(r[1])) < 1e-10);
    CHECK(std::abs(std::stod(r[6]) - std::stod(r[2])) < 1e-8);  // z+ = z-
    CHECK(std::abs(std::stod(r[7]) - std::stod(r[3])) < 1e-8);
    CHECK(r[8] == "ok");
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed config: exit 2 and nothing written") {
  const fs::path dir = scratch("bad");
  json j = free_scatter(dir / "out");
  j["model"] = {{"family", "gaussian"}, {"n", 2}, {"E0", 1.0}};  // no lambda
  const fs::path cfg = write_config(dir, j);
  CHECK(run_cli("scatter --config " + cfg.string()) == kExitConfig);
  CHECK_FALSE(fs::exists(dir / "out"));
  // same through the library entry point
  const auto r = run_experiment(j);
  CHECK(r.exit_code == kExitConfig);
  CHECK(r.outputs.empty());
  CHECK_FALSE(fs::exists(dir / "out"));
  // subcommand and config disagree
  CHECK(run_cli("flow --config " + write_config(dir, free_scatter(dir / "out")).string()) == kExitConfig);
  CHECK_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}

TEST_CASE("same config and seed give byte-identical outputs") {
  const fs::path dir = scratch("det");
  json j = {{"operation", "verify"},
            {"model", {{"family", "gaussian"}, {"n", 2}, {"E0", 1.0}, {"lambda", {1.0, 2.0}}}},
            {"seed", 17},
            {"params", {{"samples", 4}}}};
  j["output"] = (dir / "a").string();
  const auto ra = run_experiment(j);
  j["output"] = (dir / "b").string();
  RunOverrides two;
  two.jobs = 2;
  const auto rb = run_experiment(j, two);
  REQUIRE(ra.exit_code == kExitOk);
  REQUIRE(rb.exit_code == kExitOk);
  REQUIRE(ra.outputs == rb.outputs);
  for (const auto& f : ra.outputs) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

  // scatter with a worker pool matches the serial run
  json s = free_scatter(dir / "s1");
  s["model"] = {{"family", "gaussian"}, {"n", 2}, {"E0", 1.0}, {"lambda", {1.0, 1.0}}};
  s["E"] = 1.5;
  run_experiment(s);
  s["output"] = (dir / "s2").string();
  RunOverrides three;
  three.jobs = 3;
  run_experiment(s, three);
  CHECK(slurp(dir / "s1" / "scatter.csv") == slurp(dir / "s2" / "scatter.csv"));
  fs::remove_all(dir);
}

TEST_CASE("manifest lists exactly the files written") {
  const fs::path dir = scratch("manifest");
  json j = {{"operation", "manifold"},
            {"model", {{"family", "gaussian"}, {"n", 2}, {"E0", 1.0}, {"lambda", {1.0, 2.0}}}},
            {"output", (dir / "out").string()},
            {"params", {{"side", "both"}, {"trace", true}}}};
  const auto r = run_experiment(j);
  REQUIRE(r.exit_code == kExitOk);
  const json m = json::parse(slurp(dir / "out" / "manifest.json"));
  std::set<std::string> listed;
  for (const auto& f : m.at("outputs")) listed.insert(f.get<std::string>());
  std::set<std::string> present;
  for (const auto& e : fs::directory_iterator(dir / "out"))
    if (e.path().filename() != "manifest.json") present.insert(e.path().filename().string());
  CHECK(listed == present);
  CHECK(m.at("config_hash").get<std::string>().size() == 16);
  CHECK(m.contains("wall_time_s"));
  CHECK(m.at("versions").contains("eigen"));
  fs::remove_all(dir);
}

TEST_CASE("config values win over command-line flags") {
  const fs::path dir = scratch("override");
  json j = free_scatter(dir / "from_config");
  const fs::path cfg = write_config(dir, j);
  CHECK(run_cli("scatter --config " + cfg.string() + " --out " + (dir / "from_flag").string()) == kExitOk);
  CHECK(fs::exists(dir / "from_config" / "scatter.csv"));
  CHECK_FALSE(fs::exists(dir / "from_flag"));
  j.erase("output");
  const fs::path cfg2 = write_config(dir / "two", j);
  CHECK(run_cli("scatter --config " + cfg2.string() + " --out " + (dir / "from_flag").string()) == kExitOk);
  CHECK(fs::exists(dir / "from_flag" / "scatter.csv"));
  fs::remove_all(dir);
}

TEST_CASE("amplitude with the partial-wave oracle reports both magnitudes") {
  const fs::path dir = scratch("amp");
  json j = {{"operation", "amplitude"},
            {"model", {{"family", "gaussian"}, {"n", 2}, {"E0", 1.0}, {"lambda", {1.0, 1.0}}}},
            {"E", 1.5},
            {"output", (dir / "out").string()},
            {"params", {{"omega_angle", 0.0}, {"theta_angle", 0.3}, {"h", {0.05}}, {"oracle", true}}}};
  const auto r = run_experiment(j);
  REQUIRE(r.exit_code == kExitOk);
  const json a = json::parse(slurp(dir / "out" / "amplitude.json"));
  REQUIRE(a.at("per_h").size() == 1);
  const json& row = a.at("per_h").front();
  const double fsc = row.at("abs_f_semiclassical"), fpw = row.at("abs_f_partial_wave");
  CHECK(fsc == doctest::Approx(std::sqrt(3.0) * row.at("abs_A").get<double>()).epsilon(1e-12));
  CHECK(row.at("relative_error").get<double>() == doctest::Approx(std::abs(fsc - fpw) / fpw).epsilon(1e-12));
  CHECK(row.at("relative_error").get<double>() <= 0.15);
  // the oracle needs a radial model
  j["model"]["lambda"] = {1.0, 2.0};
  j["output"] = (dir / "bad").string();
  CHECK(run_experiment(j).exit_code == kExitConfig);
  CHECK_FALSE(fs::exists(dir / "bad"));
  fs::remove_all(dir);
}

TEST_CASE("relative model_file paths resolve against the config directory") {
  const fs::path dir = scratch("modelfile");
  fs::create_directories(dir);
  std::ofstream(dir / "barrier.json") << json{{"family", "eckart"}, {"n", 1}, {"E0", 1.0}, {"lambda", {1.0}}}.dump();
  const json j = {{"operation", "oracle1d"},
                  {"model_file", "barrier.json"},
                  {"h", 0.02},
                  {"output", "out"},
                  {"params", {{"E1", {-1.0, 0.0, 1.0}}}}};
  const fs::path cfg = write_config(dir, j);
  CHECK(run_cli("oracle1d --config " + cfg.string()) == kExitOk);
  const auto rows = read_csv(dir / "out" / "oracle1d.csv");
  CHECK(rows.size() == 4);
  fs::remove_all(dir);
}
