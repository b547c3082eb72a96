// bilinlab: batch experiment runner.
//
//   bilinlab --config cfg.json [--out DIR] [--seed INT] [--threads INT]
//   bilinlab --list-catalog
//
// Exit codes: 0 success, 2 validation, 3 numeric/precondition, 4 io or
// resource. BILIN_LAB_THREADS is the fallback for --threads.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "bilin/errors.hpp"
#include "bilin/experiment.hpp"
#include "bilin/parallel.hpp"

namespace {

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  const char* env = std::getenv("BILIN_LAB_THREADS");
  if (!env || !*env) return 0;  // leave the runtime default in place
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v <= 0 || v > 4096)
    bilin::fail_validation(
        "BILIN_LAB_THREADS: must be a positive integer, got \"" +
        std::string(env) + "\"");
  return (int)v;
}

bilin::json load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bilin::fail_io("config: cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof())
    bilin::fail_io("config: read failed: " + path);
  try {
    return bilin::json::parse(buf.str());
  } catch (const bilin::json::parse_error& e) {
    bilin::fail_validation("config: not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilinlab: batch experiments on bilinear wave interactions"};
  std::string config_path;
  std::string out_dir = ".";
  long long seed = -1;
  int threads = 0;
  bool list_catalog = false;
  app.add_option("--config", config_path, "experiment config (JSON file)");
  app.add_option("--out", out_dir, "output directory (default: .)");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--threads", threads,
                 "worker threads (fallback: BILIN_LAB_THREADS)");
  app.add_flag("--list-catalog", list_catalog,
               "print the surface catalog and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are validation failures
  }

  try {
    const int t = resolve_threads(threads);
    if (t > 0) bilin::set_threads(t);

    if (list_catalog) {
      for (const auto& [name, schema] : bilin::catalog_list())
        std::printf("%s: %s\n", name.c_str(), schema.c_str());
      return 0;
    }

    if (config_path.empty())
      bilin::fail_validation(
          "--config: required unless --list-catalog is given");

    const bilin::json cfg = load_config(config_path);
    const auto result = bilin::run_experiment(cfg, out_dir, seed);
    for (const auto& a : result.artifacts)
      std::printf("wrote %s\n", a.c_str());
    std::printf("ok\n");
    return 0;
  } catch (const bilin::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}
