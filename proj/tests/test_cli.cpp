// End-to-end tests for the bilinlab binary: flag handling, config
// validation with exhaustive field reporting, per-kind artifact schemas,
// sidecar round-trips, determinism, and exit codes. The binary path comes
// from the BILINLAB_BIN environment variable.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bilin/geometry.hpp"

using bilin::json;
namespace fs = std::filesystem;

namespace {

std::string bin_path() {
  const char* p = std::getenv("BILINLAB_BIN");
  return p ? p : "";
}

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

RunResult run_cli(const std::string& args) {
  RunResult r;
  const std::string cmd = bin_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, got);
  const int status = pclose(pipe);
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::path("/tmp/bilin_cli") / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const std::string& name, const json& cfg) {
  const fs::path d = fresh_dir(name);
  const fs::path p = d / "config.json";
  write_file(p, cfg.dump(2) + "\n");
  return p;
}

json elliptic(double cx, double radius) {
  return {{"name", "elliptic-paraboloid"},
          {"domain",
           {{"kind", "ball"}, {"center", {cx, 0.0}}, {"radius", radius}}}};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::vector<std::vector<std::string>> csv_cells(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::vector<std::string> cells;
    std::istringstream cs(line);
    std::string cell;
    while (std::getline(cs, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

json certify_config() {
  json cfg = {{"kind", "certify"},
              {"surface_res", 16},
              {"curve_scan", 48},
              {"h_count", 5}};
  cfg["surfaces"] = {elliptic(0.5, 0.2), elliptic(-0.5, 0.2)};
  return cfg;
}

}  // namespace

TEST_CASE("catalog listing: exact strings, stable across runs") {
  REQUIRE_FALSE(bin_path().empty());
  const auto r1 = run_cli("--list-catalog");
  CHECK(r1.exit_code == 0);
  for (const auto& [name, schema] : bilin::catalog_help())
    CHECK(contains(r1.output, name + ": " + schema + "\n"));
  CHECK(contains(r1.output, "hyperbolic-paraboloid"));
  // The generalized cone's schema names its matrix parameter.
  std::istringstream lines(r1.output);
  std::string line;
  bool saw_gc = false;
  while (std::getline(lines, line))
    if (line.rfind("generalized-cone:", 0) == 0) {
      saw_gc = true;
      CHECK(contains(line, "H"));
    }
  CHECK(saw_gc);
  const auto r2 = run_cli("--list-catalog");
  CHECK(r2.output == r1.output);
}

TEST_CASE("certify: elliptic pair passes every condition; sidecar echoes "
          "resolved defaults") {
  const auto cfg_path = write_config("certify", certify_config());
  const fs::path out = fresh_dir("certify_out");
  const auto r =
      run_cli("--config " + cfg_path.string() + " --out " + out.string());
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "wrote "));
  CHECK(contains(r.output, "ok\n"));

  const json report = json::parse(slurp(out / "certify_report.json"));
  CHECK(report.at("kind") == "certify");
  CHECK(report.at("all_pass") == true);
  REQUIRE(report.at("conditions").size() == 7);
  for (const auto& c : report.at("conditions")) {
    CHECK(c.at("verdict") == "pass");
    CHECK(c.at("infimum").get<double>() >= c.at("threshold").get<double>());
  }

  // The sidecar holds the full resolved config: explicit values echoed,
  // defaults filled in, nothing silently applied.
  const json side = json::parse(slurp(out / "certify_report.json.config.json"));
  CHECK(side.at("kind") == "certify");
  CHECK(side.at("curve_scan") == 48);
  CHECK(side.at("theta") == 0.1);
  CHECK(side.at("nvar_bound") == 0.2);
  CHECK(side.at("n") == 2);
  CHECK(side.at("seed") == 20260816);
  CHECK(side.at("surfaces").size() == 2);
  CHECK(side.at("surfaces")[0].at("margin_gap") == 0.15);

  // Sidecar re-ingestion reproduces the run byte for byte.
  const fs::path cfg2 = fresh_dir("certify_rt") / "config.json";
  write_file(cfg2, slurp(out / "certify_report.json.config.json"));
  const fs::path out2 = fresh_dir("certify_rt_out");
  const auto r2 =
      run_cli("--config " + cfg2.string() + " --out " + out2.string());
  CHECK(r2.exit_code == 0);
  CHECK(slurp(out2 / "certify_report.json") ==
        slurp(out / "certify_report.json"));
}

TEST_CASE("certify: --seed overrides the config seed and lands in the "
          "sidecar") {
  const auto cfg_path = write_config("certify_seed", certify_config());
  const fs::path out = fresh_dir("certify_seed_out");
  const auto r = run_cli("--config " + cfg_path.string() + " --out " +
                         out.string() + " --seed 7");
  CHECK(r.exit_code == 0);
  const json side = json::parse(slurp(out / "certify_report.json.config.json"));
  CHECK(side.at("seed") == 7);
}

TEST_CASE("validation: every offending field is listed at once") {
  const fs::path d = fresh_dir("badcfg");
  write_file(d / "config.json",
             "{\"kind\":\"certify\",\"surfaces\":\"nope\","
             "\"curve_scan\":-3,\"bogus\":1}\n");
  const auto r = run_cli("--config " + (d / "config.json").string() +
                         " --out " + d.string());
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "3 invalid field(s)"));
  CHECK(contains(r.output, "surfaces"));
  CHECK(contains(r.output, "curve_scan"));
  CHECK(contains(r.output, "bogus: unknown field"));
  // Validation must reject before touching the output directory.
  CHECK_FALSE(fs::exists(d / "certify_report.json"));
}

TEST_CASE("validation: unknown catalog name is rejected by name") {
  json cfg = certify_config();
  cfg["surfaces"][0]["name"] = "does-not-exist";
  const auto cfg_path = write_config("badname", cfg);
  const auto r = run_cli("--config " + cfg_path.string() + " --out " +
                         cfg_path.parent_path().string());
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "does-not-exist"));
  CHECK(contains(r.output, "elliptic-paraboloid"));  // the allowed list
}

TEST_CASE("recursion: byte-identical reruns and sidecar round-trip") {
  json cfg = {{"kind", "recursion"},
              {"p_list", {1.2, 2.0}},
              {"R_max", 1099511627776.0}};  // 2^40
  const auto cfg_path = write_config("recursion", cfg);
  const fs::path a = fresh_dir("recursion_a");
  const fs::path b = fresh_dir("recursion_b");
  const auto ra =
      run_cli("--config " + cfg_path.string() + " --out " + a.string());
  const auto rb =
      run_cli("--config " + cfg_path.string() + " --out " + b.string());
  CHECK(ra.exit_code == 0);
  CHECK(rb.exit_code == 0);
  for (const char* f :
       {"recursion_p1.2.csv", "recursion_p2.csv", "recursion_report.json"}) {
    CAPTURE(f);
    const std::string fa = slurp(a / f);
    CHECK_FALSE(fa.empty());
    CHECK(fa == slurp(b / f));
  }

  const json report = json::parse(slurp(a / "recursion_report.json"));
  REQUIRE(report.at("traces").size() == 2);
  CHECK(report.at("traces")[0].at("p") == 1.2);
  CHECK(report.at("traces")[0].at("bounded") == false);
  CHECK(report.at("traces")[1].at("p") == 2.0);
  CHECK(report.at("traces")[1].at("bounded") == true);

  // Re-ingesting a sidecar reproduces the run.
  const fs::path cfg2 = fresh_dir("recursion_rt") / "config.json";
  write_file(cfg2, slurp(a / "recursion_p1.2.csv.config.json"));
  const fs::path c = fresh_dir("recursion_c");
  const auto rc =
      run_cli("--config " + cfg2.string() + " --out " + c.string());
  CHECK(rc.exit_code == 0);
  CHECK(slurp(c / "recursion_p1.2.csv") == slurp(a / "recursion_p1.2.csv"));
  CHECK(slurp(c / "recursion_report.json") ==
        slurp(a / "recursion_report.json"));
}

TEST_CASE("scaling: CSV schema and numeric determinism") {
  json cfg = {{"kind", "scaling"},   {"family", "knapp"},
              {"R_list", {16.0, 32.0, 64.0}}, {"p_list", {1.2}},
              {"resolution", 128},  {"t_samples", 33}};
  cfg["surfaces"] = {elliptic(0.5, 0.2), elliptic(-0.5, 0.2)};
  const auto cfg_path = write_config("scaling", cfg);
  const fs::path a = fresh_dir("scaling_a");
  const auto ra =
      run_cli("--config " + cfg_path.string() + " --out " + a.string());
  CHECK(ra.exit_code == 0);

  const auto rows = csv_cells(slurp(a / "scaling.csv"));
  REQUIRE(rows.size() == 4);  // header + one row per R
  REQUIRE(rows[0].size() == 6);
  CHECK(slurp(a / "scaling.csv").rfind("R,p,ratio,mass1,mass2,runtime_ms\n",
                                       0) == 0);
  CHECK(rows[1][0] == "16");
  CHECK(rows[2][0] == "32");
  CHECK(rows[3][0] == "64");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][1] == "1.2");
    CHECK(std::stod(rows[i][2]) > 0);
    CHECK(std::stod(rows[i][3]) == doctest::Approx(1.0));
  }

  const json report = json::parse(slurp(a / "scaling_report.json"));
  CHECK(report.at("slopes")[0].at("p") == 1.2);
  CHECK(report.at("slopes")[0].at("slope").get<double>() > 0.05);

  // Same config again: every column except the wall-clock runtime_ms
  // telemetry matches exactly.
  const fs::path b = fresh_dir("scaling_b");
  const auto rb =
      run_cli("--config " + cfg_path.string() + " --out " + b.string());
  CHECK(rb.exit_code == 0);
  const auto rows_b = csv_cells(slurp(b / "scaling.csv"));
  REQUIRE(rows_b.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t jc = 0; jc + 1 < rows[i].size(); ++jc) {
      CAPTURE(i);
      CAPTURE(jc);
      CHECK(rows[i][jc] == rows_b[i][jc]);
    }
  CHECK(slurp(b / "scaling_report.json") == slurp(a / "scaling_report.json"));

  // The lee family generates its own surfaces; a surfaces key is an error.
  json lee = {{"kind", "scaling"},
              {"family", "lee"},
              {"R_list", {16.0, 32.0, 64.0}},
              {"p_list", {2.0}}};
  lee["surfaces"] = {elliptic(0.5, 0.2), elliptic(-0.5, 0.2)};
  const auto lee_path = write_config("scaling_lee", lee);
  const auto rl = run_cli("--config " + lee_path.string() + " --out " +
                          lee_path.parent_path().string());
  CHECK(rl.exit_code == 2);
  CHECK(contains(rl.output, "surfaces: must be omitted"));
}

TEST_CASE("packets: inventory schema and summary report") {
  json cfg = {{"kind", "packets"}, {"R", 64.0},         {"c", 0.25},
              {"N", 6},            {"n_omega", 2},      {"resolution", 64},
              {"density", {{"center", {0.0, 0.0}}, {"radius", 0.3}}}};
  cfg["surfaces"] = {elliptic(0.0, 0.4)};
  const auto cfg_path = write_config("packets", cfg);
  const fs::path out = fresh_dir("packets_out");
  const auto r =
      run_cli("--config " + cfg_path.string() + " --out " + out.string());
  CHECK(r.exit_code == 0);
  const std::string inv = slurp(out / "packets_inventory.csv");
  CHECK(inv.rfind("x0,x1,xi0,xi1,mass,spectral_diameter\n", 0) == 0);
  CHECK(fs::exists(out / "packets_inventory.json"));
  CHECK(fs::exists(out / "packets_inventory.csv.config.json"));
  const json report = json::parse(slurp(out / "packets_report.json"));
  CHECK(report.at("tubes").get<std::size_t>() > 100);
  CHECK(report.at("reconstruction_residual").get<double>() < 1e-6);
  CHECK(report.at("margin_shift").get<double>() > 0);
  CHECK(report.at("spectral_diameter").get<double>() > 0);
}

TEST_CASE("tables: summary CSV schema and report invariants") {
  json cfg = {{"kind", "tables"},
              {"R", 32.0},
              {"c", 0.25},
              {"resolution", 64},
              {"density", {{"center", {0.1, 0.0}}, {"radius", 0.15}}},
              {"companion_density",
               {{"center", {-0.1, 0.0}}, {"radius", 0.15}}}};
  cfg["surfaces"] = {elliptic(0.0, 0.4)};
  const auto cfg_path = write_config("tables", cfg);
  const fs::path out = fresh_dir("tables_out");
  const auto r =
      run_cli("--config " + cfg_path.string() + " --out " + out.string());
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(out / "tables.csv");
  CHECK(csv.rfind("child,component_mass,max_coefficient,degenerate_columns\n",
                  0) == 0);
  const json report = json::parse(slurp(out / "tables_report.json"));
  CHECK(report.at("children").get<std::size_t>() >= 8);
  CHECK(report.at("identity_residual").get<double>() < 1e-10);
  CHECK(report.at("column_sum_deviation").get<double>() < 1e-9);
}

TEST_CASE("energy: sweep artifacts and transversality echo") {
  json cfg = {{"kind", "energy"},
              {"h", {0.0, 0.0, 0.245}},
              {"alphas", {{"lo", 30.0}, {"hi", 60.0}, {"count", 7}}},
              {"r_units", {2.0, 4.0}},
              {"resolution", 64},
              {"dxi", 0.0625},
              {"t_samples", 9}};
  cfg["surfaces"] = {elliptic(-0.35, 0.07), elliptic(0.35, 0.125)};
  cfg["packets"] = {{{"xi_center", {0.35, 0.0}},
                     {"sigma", 0.05},
                     {"x0", {48.0, 0.0}}}};
  const auto cfg_path = write_config("energy", cfg);
  const fs::path out = fresh_dir("energy_out");
  const auto r =
      run_cli("--config " + cfg_path.string() + " --out " + out.string());
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(out / "energy.csv");
  CHECK(csv.rfind("r,energy,mass,slope_running\n", 0) == 0);
  CHECK(csv_cells(csv).size() == 3);  // header + one row per thickness
  const json report = json::parse(slurp(out / "energy_report.json"));
  CHECK(report.at("lfw_pass") == true);
  CHECK(report.at("lfw_infimum").get<double>() > 0.5);
  CHECK(report.at("energy").size() == 2);

  // A translate that misses both surfaces is a numeric failure, reported
  // with the module name.
  json far = json::parse(cfg.dump());
  far["h"] = {0.0, 0.0, 10.0};
  const auto far_path = write_config("energy_far", far);
  const auto rf = run_cli("--config " + far_path.string() + " --out " +
                          far_path.parent_path().string());
  CHECK(rf.exit_code == 3);
  CHECK(contains(rf.output, "energy:"));
}

TEST_CASE("exit codes: missing config, unreadable config, bad JSON, bad "
          "flags, unwritable output") {
  const auto r1 = run_cli("");
  CHECK(r1.exit_code == 2);
  CHECK(contains(r1.output, "--config"));

  const auto r2 = run_cli("--config /tmp/bilin_cli/definitely_missing.json");
  CHECK(r2.exit_code == 4);
  CHECK(contains(r2.output, "cannot open"));

  const fs::path d = fresh_dir("notjson");
  write_file(d / "config.json", "not json at all\n");
  const auto r3 = run_cli("--config " + (d / "config.json").string());
  CHECK(r3.exit_code == 2);
  CHECK(contains(r3.output, "not valid JSON"));

  const auto r4 = run_cli("--frobnicate");
  CHECK(r4.exit_code == 2);

  json cfg = {{"kind", "recursion"}, {"p_list", {2.0}}};
  const auto cfg_path = write_config("unwritable", cfg);
  const auto r5 = run_cli("--config " + cfg_path.string() +
                          " --out /dev/null/nested");
  CHECK(r5.exit_code == 4);
  CHECK(contains(r5.output, "output directory"));
}

TEST_CASE("config kind is mandatory and spell-checked") {
  const fs::path d = fresh_dir("nokind");
  write_file(d / "config.json", "{}\n");
  const auto r1 =
      run_cli("--config " + (d / "config.json").string() + " --out " +
              d.string());
  CHECK(r1.exit_code == 2);
  CHECK(contains(r1.output, "kind"));

  write_file(d / "config.json", "{\"kind\": \"certfy\"}\n");
  const auto r2 =
      run_cli("--config " + (d / "config.json").string() + " --out " +
              d.string());
  CHECK(r2.exit_code == 2);
  CHECK(contains(r2.output, "certfy"));
}
