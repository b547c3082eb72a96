// Experiment orchestration: exhaustive config validation, default
// resolution with sidecar echo, execution of the six experiment kinds, and
// artifact emission.

#include "bilin/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bilin/energy.hpp"
#include "bilin/errors.hpp"
#include "bilin/freewave.hpp"
#include "bilin/geometry.hpp"
#include "bilin/tables.hpp"
#include "bilin/wavepacket.hpp"

namespace bilin {
namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string join_quoted(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += "\"" + items[i] + "\"";
  }
  return out + "]";
}

// ---------------------------------------------------------------------------
// Validation plumbing: every problem is collected, and the final error
// message lists all of them at once.

struct FieldErrors {
  std::vector<std::string> items;
  void add(const std::string& field, const std::string& msg) {
    items.push_back(field + ": " + msg);
  }
  void raise_if_any() const {
    if (items.empty()) return;
    std::string msg =
        "config: " + std::to_string(items.size()) + " invalid field(s): ";
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) msg += "; ";
      msg += items[i];
    }
    fail_validation(msg);
  }
};

// Typed field reader over one JSON object. Every accessor echoes the
// resolved value (default applied when the key is absent) into `resolved`,
// and `finish()` flags the keys nobody consumed.
class Fields {
 public:
  Fields(const json& cfg, std::string prefix, FieldErrors& errs)
      : cfg_(cfg), prefix_(std::move(prefix)), errs_(errs) {}

  json resolved = json::object();

  const json& raw() const { return cfg_; }

  void mark_seen(const std::string& key) { seen_.insert(key); }

  void add(const std::string& key, const std::string& msg) {
    errs_.add(prefix_.empty() ? key : prefix_ + "." + key, msg);
  }

  double number(const std::string& key, std::optional<double> def, double lo,
                double hi) {
    seen_.insert(key);
    double v = def.value_or(lo);
    if (!cfg_.contains(key)) {
      if (!def) add(key, "required number");
    } else if (!cfg_.at(key).is_number()) {
      add(key, "must be a number");
    } else {
      v = cfg_.at(key).get<double>();
    }
    if (!(v >= lo && v <= hi)) {
      add(key, "must lie in [" + fmt_g(lo) + ", " + fmt_g(hi) + "]");
      v = std::clamp(def.value_or(lo), lo, hi);
    }
    resolved[key] = v;
    return v;
  }

  long long integer(const std::string& key, std::optional<long long> def,
                    long long lo, long long hi) {
    seen_.insert(key);
    long long v = def.value_or(lo);
    if (!cfg_.contains(key)) {
      if (!def) add(key, "required integer");
    } else if (!cfg_.at(key).is_number_integer()) {
      add(key, "must be an integer");
    } else {
      v = cfg_.at(key).get<long long>();
    }
    if (v < lo || v > hi) {
      add(key, "must lie in [" + std::to_string(lo) + ", " +
                   std::to_string(hi) + "]");
      v = std::clamp(def.value_or(lo), lo, hi);
    }
    resolved[key] = v;
    return v;
  }

  std::string choice(const std::string& key, std::optional<std::string> def,
                     const std::vector<std::string>& allowed) {
    seen_.insert(key);
    std::string v = def.value_or("");
    if (!cfg_.contains(key)) {
      if (!def) add(key, "required string, one of " + join_quoted(allowed));
    } else if (!cfg_.at(key).is_string()) {
      add(key, "must be a string, one of " + join_quoted(allowed));
    } else {
      v = cfg_.at(key).get<std::string>();
    }
    if (!v.empty() &&
        std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      add(key, "got \"" + v + "\", must be one of " + join_quoted(allowed));
      v.clear();
    }
    resolved[key] = v;
    return v;
  }

  // Required array of numbers with at least `min_len` entries in [lo, hi].
  std::vector<double> number_list(const std::string& key, std::size_t min_len,
                                  double lo, double hi) {
    seen_.insert(key);
    std::vector<double> v;
    if (!cfg_.contains(key) || !cfg_.at(key).is_array()) {
      add(key, "required array of at least " + std::to_string(min_len) +
                   " numbers");
      resolved[key] = v;
      return v;
    }
    bool typed = true;
    for (const auto& e : cfg_.at(key)) {
      if (!e.is_number()) {
        add(key, "entries must be numbers");
        typed = false;
        break;
      }
      v.push_back(e.get<double>());
    }
    if (typed) {
      if (v.size() < min_len)
        add(key,
            "needs at least " + std::to_string(min_len) + " entries");
      for (double x : v)
        if (!(x >= lo && x <= hi)) {
          add(key, "entries must lie in [" + fmt_g(lo) + ", " + fmt_g(hi) +
                       "]");
          break;
        }
    }
    resolved[key] = v;
    return v;
  }

  // Fixed-length numeric array as a vector; nullopt on any problem.
  std::optional<Vec> vec(const std::string& key,
                         std::optional<std::vector<double>> def, int len) {
    seen_.insert(key);
    std::vector<double> raw;
    bool ok = true;
    if (!cfg_.contains(key)) {
      if (def) {
        raw = *def;
      } else {
        add(key, "required array of " + std::to_string(len) + " numbers");
        ok = false;
      }
    } else if (!cfg_.at(key).is_array()) {
      add(key, "must be an array of " + std::to_string(len) + " numbers");
      ok = false;
    } else {
      for (const auto& e : cfg_.at(key)) {
        if (!e.is_number()) {
          add(key, "entries must be numbers");
          ok = false;
          break;
        }
        raw.push_back(e.get<double>());
      }
    }
    if (ok && (int)raw.size() != len) {
      add(key, "must have exactly " + std::to_string(len) + " entries");
      ok = false;
    }
    resolved[key] = raw;
    if (!ok) return std::nullopt;
    Vec v(len);
    for (int i = 0; i < len; ++i) v(i) = raw[i];
    return v;
  }

  const json* object(const std::string& key, bool required) {
    seen_.insert(key);
    if (!cfg_.contains(key)) {
      if (required) add(key, "required object");
      return nullptr;
    }
    if (!cfg_.at(key).is_object()) {
      add(key, "must be an object");
      return nullptr;
    }
    return &cfg_.at(key);
  }

  void finish() {
    for (const auto& item : cfg_.items())
      if (!seen_.count(item.key())) add(item.key(), "unknown field");
  }

 private:
  const json& cfg_;
  std::string prefix_;
  FieldErrors& errs_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Module error propagation: prefix the module name so a failing run names
// both the module and the operation that tripped.

template <class F>
auto with_module(const char* module, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(module) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Artifact emission. Every artifact file gets a `<file>.config.json`
// sidecar holding the full resolved config, so any sidecar can be fed back
// as --config to reproduce the run.

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_io("experiment: cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  out.flush();
  if (!out.good()) fail_io("experiment: write failed: " + path);
}

struct Sink {
  fs::path dir;
  json resolved;
  std::vector<std::string> artifacts;

  std::string path(const std::string& name) const {
    return (dir / name).string();
  }
  // Record a file written by a module writer and drop its config sidecar.
  void stamp(const std::string& full_path) {
    write_json_file(full_path + ".config.json", resolved);
    artifacts.push_back(full_path);
  }
  void emit_json(const std::string& name, const json& j) {
    const std::string p = path(name);
    write_json_file(p, j);
    stamp(p);
  }
  void emit_csv(const std::string& name, const std::string& header,
                const std::vector<std::vector<double>>& rows) {
    const std::string p = path(name);
    std::ofstream out(p, std::ios::binary);
    if (!out) fail_io("experiment: cannot open CSV for writing: " + p);
    out << header << "\n";
    char buf[48];
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", row[i]);
        if (i) out << ",";
        out << buf;
      }
      out << "\n";
    }
    out.flush();
    if (!out.good()) fail_io("experiment: CSV write failed: " + p);
    stamp(p);
  }
};

using Runner = std::function<json(Sink&)>;

// ---------------------------------------------------------------------------
// Shared sub-schemas.

// {name, params?, domain, margin_gap?} -> surface, with the canonical
// domain echo so sidecar re-ingestion is stable.
std::optional<SurfaceSpec> parse_surface(const json& j,
                                         const std::string& field, int n,
                                         FieldErrors& errs, json& echo) {
  echo = json::object();
  if (!j.is_object()) {
    errs.add(field, "must be an object {name, params, domain, margin_gap}");
    return std::nullopt;
  }
  Fields f(j, field, errs);
  const std::string name = f.choice("name", std::nullopt, catalog_names());
  const json* params = f.object("params", /*required=*/false);
  const json params_echo = params ? *params : json::object();
  f.resolved["params"] = params_echo;
  const double margin_gap = f.number("margin_gap", 0.15, 1e-6, 10.0);
  const json* dom = f.object("domain", /*required=*/true);
  std::optional<Domain> D;
  if (dom) {
    try {
      D = Domain::from_json(*dom, n);
      f.resolved["domain"] = D->to_json();
    } catch (const Error& e) {
      f.add("domain", e.what());
    }
  }
  f.finish();
  echo = f.resolved;
  if (name.empty() || !D) return std::nullopt;
  std::optional<SurfaceSpec> S;
  try {
    S = make_surface(name, params_echo, *D, margin_gap);
  } catch (const Error& e) {
    errs.add(field, e.what());
  }
  return S;
}

// "surfaces": array of exactly `count` descriptors.
std::vector<std::optional<SurfaceSpec>> parse_surfaces(Fields& f, int n,
                                                       std::size_t count,
                                                       FieldErrors& errs) {
  f.mark_seen("surfaces");
  std::vector<std::optional<SurfaceSpec>> out(count);
  json echo = json::array();
  const json& cfg = f.raw();
  if (!cfg.contains("surfaces") || !cfg.at("surfaces").is_array() ||
      cfg.at("surfaces").size() != count) {
    f.add("surfaces", "must be an array of exactly " + std::to_string(count) +
                          " surface descriptors");
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      json e;
      out[i] = parse_surface(cfg.at("surfaces")[i],
                             "surfaces[" + std::to_string(i) + "]", n, errs,
                             e);
      echo.push_back(e);
    }
  }
  f.resolved["surfaces"] = echo;
  return out;
}

// Smooth compactly supported bump at `center`, modulated toward spatial
// position `shift`.
Density bump_density(const Vec& center, double radius, const Vec& shift) {
  return [center, radius, shift](const Vec& xi) -> cplx {
    const double r2 = (xi - center).squaredNorm();
    const double rho2 = radius * radius;
    if (r2 >= rho2 * (1.0 - 1e-12)) return cplx(0, 0);
    return std::polar(std::exp(-r2 / (rho2 - r2)), -xi.dot(shift));
  };
}

// Hard-cut Gaussian packet profile at frequency `xic`, spatial center `x0`.
Density gauss_packet_density(const Vec& xic, double sigma, const Vec& x0,
                             double cut) {
  return [xic, sigma, x0, cut](const Vec& xi) -> cplx {
    const Vec d = xi - xic;
    const double r2 = d.squaredNorm();
    if (r2 >= cut * cut) return cplx(0, 0);
    return std::polar(std::exp(-r2 / (4.0 * sigma * sigma)), -xi.dot(x0));
  };
}

// {center, radius, shift?} sub-object for packets/tables input waves.
std::optional<Density> parse_bump_density(Fields& f, const std::string& key,
                                          int n, FieldErrors& errs) {
  f.mark_seen(key);
  const json& cfg = f.raw();
  if (!cfg.contains(key) || !cfg.at(key).is_object()) {
    f.add(key, "required object {center, radius, shift?}");
    f.resolved[key] = json::object();
    return std::nullopt;
  }
  Fields d(cfg.at(key), key, errs);
  auto center = d.vec("center", std::nullopt, n);
  const double radius = d.number("radius", std::nullopt, 1e-9, 100.0);
  auto shift = d.vec("shift", std::vector<double>(n, 0.0), n);
  d.finish();
  f.resolved[key] = d.resolved;
  if (!center || !shift) return std::nullopt;
  return bump_density(*center, radius, *shift);
}

std::vector<double> linspace(double a, double b, long long k) {
  std::vector<double> v;
  for (long long i = 0; i < k; ++i)
    v.push_back(a + (b - a) * (double)i / (double)(k - 1));
  return v;
}

void check_strictly_increasing(Fields& f, const std::string& key,
                               const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) {
      f.add(key, "entries must be strictly increasing");
      return;
    }
}

// ---------------------------------------------------------------------------
// certify: condition checks on a surface pair.

Runner resolve_certify(Fields& f, FieldErrors& errs, long long seed) {
  const int n = (int)f.integer("n", 2, 2, 2);
  ConditionOptions opt;
  opt.theta = f.number("theta", 0.1, 1e-6, 0.999);
  opt.surface_res = (int)f.integer("surface_res", 24, 4, 512);
  opt.curve_scan = (int)f.integer("curve_scan", 64, 8, 4096);
  opt.h_count = (int)f.integer("h_count", 9, 1, 200);
  opt.nvar_bound = f.number("nvar_bound", 0.2, 1e-6, 10.0);
  opt.seed = (unsigned long long)seed;
  auto S = parse_surfaces(f, n, 2, errs);

  return [S, opt](Sink& sink) -> json {
    const SurfaceSpec& S1 = S[0].value();
    const SurfaceSpec& S2 = S[1].value();
    json conds = json::array();
    with_module("geometry", [&] {
      const auto hs = default_h_samples(S1, S2, opt.h_count, opt.seed);
      conds.push_back(check_C1(S1, S2, opt).to_json());
      const auto c2 = check_C2(S1, S2, hs, opt);
      conds.push_back(c2.first.to_json());
      conds.push_back(c2.second.to_json());
      conds.push_back(check_C3(S1, S2, hs, opt).to_json());
      const auto gc = check_C3bb_and_CLee(S1, S2, hs, opt);
      conds.push_back(gc.first.to_json());
      conds.push_back(gc.second.to_json());
      conds.push_back(check_LFW(S1, S2, hs, opt).to_json());
      return 0;
    });
    bool all = true;
    for (const auto& c : conds) all = all && c.at("verdict") == "pass";
    json report = {{"kind", "certify"}, {"all_pass", all},
                   {"conditions", conds}};
    sink.emit_json("certify_report.json", report);
    return report;
  };
}

// ---------------------------------------------------------------------------
// scaling: bilinear ratio sweep over dyadic scales.

Runner resolve_scaling(Fields& f, FieldErrors& errs) {
  const int n = (int)f.integer("n", 2, 2, 2);
  const std::string family =
      f.choice("family", std::nullopt, {"knapp", "lee"});
  auto R_list = f.number_list("R_list", 3, 4.0, 1e9);
  check_strictly_increasing(f, "R_list", R_list);
  for (double R : R_list) {
    const double l = std::log2(R);
    if (std::abs(l - std::round(l)) > 1e-9) {
      f.add("R_list", "entries must be powers of two");
      break;
    }
  }
  auto p_list = f.number_list("p_list", 1, 1.0001, 16.0);
  check_strictly_increasing(f, "p_list", p_list);
  const int resolution = (int)f.integer("resolution", 256, 16, 4096);
  const int supersample = (int)f.integer("supersample", 3, 1, 8);
  const int t_samples = (int)f.integer("t_samples", 65, 2, 100000);

  std::vector<std::optional<SurfaceSpec>> S(2);
  if (family == "knapp") {
    S = parse_surfaces(f, n, 2, errs);
  } else {
    f.mark_seen("surfaces");
    if (f.raw().contains("surfaces"))
      f.add("surfaces",
            "must be omitted for the lee family (surfaces are generated per "
            "scale)");
  }

  return [=](Sink& sink) -> json {
    json slopes = json::array();
    std::vector<std::vector<double>> rows;
    for (double p : p_list) {
      PairGenerator gen = [&](double R) {
        WavePairData pd = family == "knapp"
                              ? generate_knapp(S[0].value(), S[1].value(), R)
                              : generate_lee_pair(R);
        const Vec dxi = Vec::Constant(n, 1.0 / R);
        const auto g1 = make_grid_spacing(pd.S1, (std::size_t)resolution, dxi);
        const auto g2 = make_grid_spacing(pd.S2, (std::size_t)resolution, dxi);
        BilinearProblem prob;
        prob.w1 = init_wave(pd.S1, pd.f1, g1, supersample);
        prob.w2 = init_wave(pd.S2, pd.f2, g2, supersample);
        normalize_mass(prob.w1);
        normalize_mass(prob.w2);
        prob.Q.center = Vec::Zero(n + 1);
        prob.Q.side = R;
        prob.t_samples = t_samples;
        return prob;
      };
      const auto res = with_module("freewave", [&] {
        return estimate_scaling_exponent(gen, p, R_list, Exec::parallel);
      });
      slopes.push_back({{"p", p}, {"slope", res.slope}});
      for (const auto& s : res.samples)
        rows.push_back({s.R, p, s.ratio, s.mass1, s.mass2, s.runtime_ms});
    }
    sink.emit_csv("scaling.csv", "R,p,ratio,mass1,mass2,runtime_ms", rows);
    json report = {{"kind", "scaling"}, {"slopes", slopes}};
    sink.emit_json("scaling_report.json", report);
    return report;
  };
}

// ---------------------------------------------------------------------------
// packets: decomposition inventory for one bump wave.

Runner resolve_packets(Fields& f, FieldErrors& errs) {
  const int n = (int)f.integer("n", 2, 2, 2);
  const double R = f.number("R", std::nullopt, 4.0, 1e9);
  const double c = f.number("c", std::nullopt, 1e-6, kCUpperBound);
  const int N = (int)f.integer("N", 10, 2, 60);
  const int n_omega = (int)f.integer("n_omega", 3, 1, 12);
  const int resolution = (int)f.integer("resolution", 256, 16, 4096);
  const int pad_cells = (int)f.integer("pad_cells", 4, 2, 64);
  auto S = parse_surfaces(f, n, 1, errs);
  auto dens = parse_bump_density(f, "density", n, errs);

  return [=](Sink& sink) -> json {
    const SurfaceSpec& surf = S[0].value();
    auto w = with_module("freewave", [&] {
      const auto g = make_grid(surf, (std::size_t)resolution, pad_cells);
      WaveState w0 = init_wave(surf, dens.value(), g);
      normalize_mass(w0);
      return w0;
    });
    CubeRegion Q;
    Q.center = Vec::Zero(n + 1);
    Q.side = R;
    json report;
    with_module("wavepacket", [&] {
      const auto d = decompose(w, Q, c, N, n_omega, Exec::parallel);
      write_packet_inventory(d, sink.path("packets_inventory.csv"),
                             sink.path("packets_inventory.json"));
      report = {{"kind", "packets"},
                {"tubes", d.tubes.size()},
                {"reconstruction_residual", reconstruction_residual(d)},
                {"margin_shift", margin_shift(d)},
                {"spectral_diameter", packet_spectral_diameter(d)}};
      return 0;
    });
    sink.stamp(sink.path("packets_inventory.csv"));
    sink.stamp(sink.path("packets_inventory.json"));
    sink.emit_json("packets_report.json", report);
    return report;
  };
}

// ---------------------------------------------------------------------------
// tables: packet-mass table on the child partition of one cube.

Runner resolve_tables(Fields& f, FieldErrors& errs) {
  const int n = (int)f.integer("n", 2, 2, 2);
  const double R = f.number("R", std::nullopt, 4.0, 1e9);
  const double c = f.number("c", std::nullopt, 1e-6, kCUpperBound);
  const int C0 = (int)f.integer("C0", 4, 1, 16);
  const int N = (int)f.integer("N", 10, 2, 60);
  const int resolution = (int)f.integer("resolution", 128, 16, 4096);
  const int pad_cells = (int)f.integer("pad_cells", 4, 2, 64);
  auto S = parse_surfaces(f, n, 1, errs);
  auto dens = parse_bump_density(f, "density", n, errs);
  auto cdens = parse_bump_density(f, "companion_density", n, errs);

  return [=](Sink& sink) -> json {
    const SurfaceSpec& surf = S[0].value();
    auto waves = with_module("freewave", [&] {
      const auto g = make_grid(surf, (std::size_t)resolution, pad_cells);
      WaveState phi = init_wave(surf, dens.value(), g);
      WaveState psi = init_wave(surf, cdens.value(), g);
      normalize_mass(phi);
      normalize_mass(psi);
      return std::make_pair(std::move(phi), std::move(psi));
    });
    CubeRegion Q;
    Q.center = Vec::Zero(n + 1);
    Q.side = R;
    json report;
    with_module("tables", [&] {
      const auto table =
          build_table(waves.first, waves.second, Q, c, C0, N, Exec::parallel);
      write_table_csv(table, sink.path("tables.csv"));
      report = {{"kind", "tables"},
                {"children", table.partition.size()},
                {"identity_residual", table.identity_residual},
                {"mass_ratio", table.mass_ratio()},
                {"column_sum_deviation", table.column_sum_deviation()},
                {"degenerate_columns", table.degenerate_columns},
                {"lattice_columns", table.lattice_columns}};
      return 0;
    });
    sink.stamp(sink.path("tables.csv"));
    sink.emit_json("tables_report.json", report);
    return report;
  };
}

// ---------------------------------------------------------------------------
// energy: thickened-cone energy sweep for a packet family.

Runner resolve_energy(Fields& f, FieldErrors& errs) {
  const int n = (int)f.integer("n", 2, 2, 2);
  const int resolution = (int)f.integer("resolution", 256, 16, 8192);
  const double dxi = f.number("dxi", std::nullopt, 1e-9, 100.0);
  const int t_samples = (int)f.integer("t_samples", 33, 2, 100000);
  auto S = parse_surfaces(f, n, 2, errs);
  auto h = f.vec("h", std::nullopt, n + 1);

  // alphas: {lo, hi, count} -> uniform ray lengths, apex excluded.
  std::vector<double> alphas;
  {
    const json* a = f.object("alphas", /*required=*/true);
    if (a) {
      Fields af(*a, "alphas", errs);
      const double lo = af.number("lo", std::nullopt, 1e-9, 1e9);
      const double hi = af.number("hi", std::nullopt, 1e-9, 1e9);
      const long long count = af.integer("count", std::nullopt, 2, 100000);
      af.finish();
      if (hi <= lo) af.add("hi", "must exceed lo");
      f.resolved["alphas"] = af.resolved;
      alphas = linspace(lo, hi, count);
    } else {
      f.resolved["alphas"] = json::object();
    }
  }

  auto r_units = f.number_list("r_units", 2, 1e-9, 1e9);
  check_strictly_increasing(f, "r_units", r_units);

  // packets: [{xi_center, sigma, x0?, cut?}] riding the second surface.
  std::vector<Density> dens;
  bool dens_ok = true;
  {
    f.mark_seen("packets");
    const json& cfg = f.raw();
    json echo = json::array();
    if (!cfg.contains("packets") || !cfg.at("packets").is_array() ||
        cfg.at("packets").empty()) {
      f.add("packets",
            "required non-empty array of {xi_center, sigma, x0, cut}");
      dens_ok = false;
    } else {
      for (std::size_t i = 0; i < cfg.at("packets").size(); ++i) {
        const std::string field = "packets[" + std::to_string(i) + "]";
        const json& ent = cfg.at("packets")[i];
        if (!ent.is_object()) {
          errs.add(field, "must be an object {xi_center, sigma, x0, cut}");
          dens_ok = false;
          echo.push_back(json::object());
          continue;
        }
        Fields d(ent, field, errs);
        auto xic = d.vec("xi_center", std::nullopt, n);
        const double sigma = d.number("sigma", std::nullopt, 1e-9, 10.0);
        auto x0 = d.vec("x0", std::vector<double>(n, 0.0), n);
        const double cut = d.number("cut", 0.1, 1e-9, 10.0);
        d.finish();
        echo.push_back(d.resolved);
        if (xic && x0)
          dens.push_back(gauss_packet_density(*xic, sigma, *x0, cut));
        else
          dens_ok = false;
      }
    }
    f.resolved["packets"] = echo;
  }
  (void)dens_ok;

  return [=](Sink& sink) -> json {
    const SurfaceSpec& S1 = S[0].value();
    const SurfaceSpec& S2 = S[1].value();
    const auto sweep = with_module("energy", [&] {
      const auto g = make_grid_spacing(S2, (std::size_t)resolution,
                                       Vec::Constant(n, dxi));
      std::vector<WaveState> family;
      for (const auto& dd : dens) {
        WaveState w = init_wave(S2, dd, g);
        normalize_mass(w);
        family.push_back(std::move(w));
      }
      std::vector<double> r_list;
      for (double u : r_units) r_list.push_back(u * g.dx(0));
      return energy_ratio_sweep(family, S1, S2, h.value(), alphas, r_list,
                                t_samples, Exec::parallel);
    });
    with_module("energy",
                [&] { write_energy_csv(sink.path("energy.csv"), sweep);
                      return 0; });
    sink.stamp(sink.path("energy.csv"));
    json report = {{"kind", "energy"},
                   {"slope", sweep.slope},
                   {"lfw_pass", sweep.lfw_pass},
                   {"lfw_infimum", sweep.lfw_infimum},
                   {"r", sweep.r},
                   {"energy", sweep.energy},
                   {"mass", sweep.mass}};
    if (!sweep.details.is_null()) report["details"] = sweep.details;
    sink.emit_json("energy_report.json", report);
    return report;
  };
}

// ---------------------------------------------------------------------------
// recursion: scale recursion traces, one CSV per exponent p.

Runner resolve_recursion(Fields& f, FieldErrors&) {
  const int n = (int)f.integer("n", 2, 1, 9);
  auto p_list = f.number_list("p_list", 1, 1.0001, 16.0);
  check_strictly_increasing(f, "p_list", p_list);
  const double C = f.number("C", 0.5, 1e-3, 100.0);
  const double C_big = f.number("C_big", 1.0, 1e-12, 1e6);
  const double R0 = f.number("R0", 1.0, 1e-6, 1e12);
  const double R_max = f.number("R_max", std::pow(2.0, 100), 1e-6, 1e308);
  if (R_max <= R0) f.add("R_max", "must exceed R0");
  if (std::log2(R_max / std::max(R0, 1e-300)) > 4096.0)
    f.add("R_max", "too many doubling steps (limit 4096)");
  {
    std::set<std::string> tags;
    for (double p : p_list)
      if (!tags.insert(fmt_g(p)).second) {
        f.add("p_list", "entries collide at the 6-digit file tag " +
                            fmt_g(p));
        break;
      }
  }

  return [=](Sink& sink) -> json {
    json traces = json::array();
    for (double p : p_list) {
      const auto trace = with_module(
          "tables", [&] { return iterate_recursion(p, n, C, C_big, R0,
                                                   R_max); });
      const std::string name = "recursion_p" + fmt_g(p) + ".csv";
      with_module("tables", [&] {
        write_recursion_csv(trace, sink.path(name));
        return 0;
      });
      sink.stamp(sink.path(name));
      traces.push_back({{"p", p},
                        {"csv", name},
                        {"exponent", trace.exponent},
                        {"sup", trace.sup},
                        {"bounded", trace.bounded},
                        {"steps", trace.R.size()},
                        {"product_bound", recursion_product(trace, C)}});
    }
    json report = {{"kind", "recursion"}, {"traces", traces}};
    sink.emit_json("recursion_report.json", report);
    return report;
  };
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentResult run_experiment(const json& config, const std::string& out_dir,
                                long long seed_override) {
  if (!config.is_object())
    fail_validation("config: top level must be a JSON object");
  FieldErrors errs;
  Fields f(config, "", errs);
  static const std::vector<std::string> kinds = {
      "certify", "scaling", "packets", "tables", "energy", "recursion"};
  const std::string kind = f.choice("kind", std::nullopt, kinds);
  if (kind.empty()) errs.raise_if_any();  // nothing else can resolve
  long long seed = f.integer("seed", 20260816LL, 0, 1LL << 62);
  if (seed_override >= 0) {
    seed = seed_override;
    f.resolved["seed"] = seed;
  }

  Runner runner;
  if (kind == "certify") runner = resolve_certify(f, errs, seed);
  else if (kind == "scaling") runner = resolve_scaling(f, errs);
  else if (kind == "packets") runner = resolve_packets(f, errs);
  else if (kind == "tables") runner = resolve_tables(f, errs);
  else if (kind == "energy") runner = resolve_energy(f, errs);
  else runner = resolve_recursion(f, errs);
  f.finish();
  errs.raise_if_any();

  Sink sink;
  sink.dir = fs::path(out_dir);
  std::error_code ec;
  fs::create_directories(sink.dir, ec);
  if (ec)
    fail_io("experiment: cannot create output directory: " + out_dir + " (" +
            ec.message() + ")");
  sink.resolved = f.resolved;

  ExperimentResult result;
  result.resolved = f.resolved;
  result.report = runner(sink);
  result.artifacts = sink.artifacts;
  return result;
}

std::vector<std::pair<std::string, std::string>> catalog_list() {
  return catalog_help();
}

}  // namespace bilin
