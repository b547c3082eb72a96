#pragma once
// Batch experiment runner: a JSON config describes one experiment; running
// it writes CSV/JSON artifacts into an output directory and returns a
// summary report.
//
// Experiment kinds and their artifacts:
//   certify    condition checks on a surface pair -> certify_report.json
//   scaling    bilinear ratio sweep over dyadic R  -> scaling.csv + report
//   packets    wave-packet decomposition inventory -> packets_inventory.csv
//              (+ the inventory's own parameter echo) + report
//   tables     packet-mass table on a cube partition -> tables.csv + report
//   energy     thickened-cone energy sweep          -> energy.csv + report
//   recursion  scale recursion traces, one CSV per p -> recursion_p*.csv
//              + report
//
// Contracts:
//   - Validation happens before any file is touched, and the error message
//     lists every offending field (unknown keys included).
//   - No silent defaults: the resolved config (defaults applied) is echoed
//     verbatim in a `<artifact>.config.json` sidecar next to every artifact,
//     and feeding a sidecar back as `--config` reproduces the run.
//   - Determinism: for a fixed config and seed, artifact files are
//     byte-identical across runs, except the wall-clock `runtime_ms` column
//     of scaling.csv (telemetry; every other column is deterministic).
//   - Errors from the underlying modules propagate with the module name
//     prefixed, mapped to exit codes by Error::exit_code() (validation 2,
//     numeric 3, io 4).
//
// One experiment per process invocation; orchestration is single threaded
// and delegates parallelism to the modules.

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace bilin {

using json = nlohmann::json;

struct ExperimentResult {
  json resolved;                       // config with every default applied
  std::vector<std::string> artifacts;  // files written (sidecars not listed)
  json report;                         // contents of the <kind>_report.json
};

// Run the experiment described by `config` (a JSON object with a "kind"
// field) inside `out_dir`, creating the directory if needed. A non-negative
// `seed_override` replaces the config's seed before resolution, so the
// echoed sidecar carries the seed that was actually used.
ExperimentResult run_experiment(const json& config, const std::string& out_dir,
                                long long seed_override = -1);

// Surface catalog as (name, parameter schema) pairs; the exact strings of
// the geometry module, stable across runs.
std::vector<std::pair<std::string, std::string>> catalog_list();

}  // namespace bilin
