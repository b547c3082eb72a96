#include "bilin/freewave.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "bilin/errors.hpp"

namespace bilin {

namespace {

void unflatten(std::size_t flat, int n, std::size_t res, std::size_t* idx) {
  for (int d = n - 1; d >= 0; --d) {
    idx[d] = flat % res;
    flat /= res;
  }
}

int index_parity(const std::size_t* idx, int n) {
  std::size_t s = 0;
  for (int d = 0; d < n; ++d) s += idx[d];
  return (s & 1u) ? -1 : 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// FrequencyGrid

Vec FrequencyGrid::node(std::size_t flat) const {
  std::size_t idx[8];
  unflatten(flat, n, res, idx);
  Vec v(n);
  for (int d = 0; d < n; ++d) v(d) = lo(d) + ((double)idx[d] + 0.5) * dxi(d);
  return v;
}

double FrequencyGrid::dx(int axis) const {
  return 2.0 * M_PI / ((double)res * dxi(axis));
}

double FrequencyGrid::window(int axis) const { return (double)res * dx(axis); }

Vec FrequencyGrid::x_node(std::size_t flat) const {
  std::size_t idx[8];
  unflatten(flat, n, res, idx);
  Vec v(n);
  for (int d = 0; d < n; ++d)
    v(d) = ((double)idx[d] - (double)(res / 2)) * dx(d);
  return v;
}

bool FrequencyGrid::compatible_with(const FrequencyGrid& o) const {
  if (n != o.n || res != o.res) return false;
  for (int d = 0; d < n; ++d)
    if (std::abs(dxi(d) - o.dxi(d)) > 1e-12 * std::max(1.0, std::abs(dxi(d))))
      return false;
  return true;
}

static void validate_grid_shape(int n, std::size_t res, int pad_cells) {
  require(n >= 1 && n <= 6, ErrorKind::validation,
          "frequency grid: dimension must be in [1, 6]");
  require(is_pow2(res) && res >= 16, ErrorKind::validation,
          "frequency grid: resolution must be a power of two >= 16");
  require(pad_cells >= 2, ErrorKind::validation,
          "frequency grid: need at least 2 cells of padding");
  require(2 * (std::size_t)pad_cells + 4 <= res, ErrorKind::validation,
          "frequency grid: resolution too small for the requested padding");
}

FrequencyGrid make_grid(const SurfaceSpec& S, std::size_t res, int pad_cells) {
  const int n = S.n();
  validate_grid_shape(n, res, pad_cells);
  Vec blo(n), bhi(n);
  S.D_tilde.bounds(blo, bhi);
  FrequencyGrid g;
  g.n = n;
  g.res = res;
  g.dxi = Vec(n);
  g.lo = Vec(n);
  for (int d = 0; d < n; ++d) {
    const double w = bhi(d) - blo(d);
    require(w > 0, ErrorKind::validation, "frequency grid: empty domain box");
    g.dxi(d) = w / (double)(res - 2 * (std::size_t)pad_cells);
    g.lo(d) = blo(d) - pad_cells * g.dxi(d);
  }
  return g;
}

FrequencyGrid make_grid_spacing(const SurfaceSpec& S, std::size_t res,
                                const Vec& dxi) {
  const int n = S.n();
  validate_grid_shape(n, res, 2);
  require((int)dxi.size() == n && dxi.minCoeff() > 0, ErrorKind::validation,
          "frequency grid: spacing must be positive per axis");
  Vec blo(n), bhi(n);
  S.D_tilde.bounds(blo, bhi);
  FrequencyGrid g;
  g.n = n;
  g.res = res;
  g.dxi = dxi;
  g.lo = Vec(n);
  for (int d = 0; d < n; ++d) {
    const double mid = 0.5 * (blo(d) + bhi(d));
    g.lo(d) = mid - 0.5 * (double)res * dxi(d);
    const bool covered = blo(d) >= g.lo(d) + 2 * dxi(d) &&
                         bhi(d) <= g.lo(d) + ((double)res - 2) * dxi(d);
    require(covered, ErrorKind::validation,
            "frequency grid: extent does not cover the enlarged domain with "
            "2 cells of padding");
  }
  return g;
}

std::pair<FrequencyGrid, FrequencyGrid> make_common_grids(
    const SurfaceSpec& S1, const SurfaceSpec& S2, std::size_t res,
    int pad_cells) {
  require(S1.n() == S2.n(), ErrorKind::validation,
          "common grids: dimension mismatch");
  const int n = S1.n();
  validate_grid_shape(n, res, pad_cells);
  Vec lo1(n), hi1(n), lo2(n), hi2(n);
  S1.D_tilde.bounds(lo1, hi1);
  S2.D_tilde.bounds(lo2, hi2);
  Vec dxi(n);
  for (int d = 0; d < n; ++d) {
    const double w = std::max(hi1(d) - lo1(d), hi2(d) - lo2(d));
    dxi(d) = w / (double)(res - 2 * (std::size_t)pad_cells);
  }
  auto centered = [&](const Vec& blo, const Vec& bhi) {
    FrequencyGrid g;
    g.n = n;
    g.res = res;
    g.dxi = dxi;
    g.lo = Vec(n);
    for (int d = 0; d < n; ++d)
      g.lo(d) = 0.5 * (blo(d) + bhi(d)) - 0.5 * (double)res * dxi(d);
    return g;
  };
  return {centered(lo1, hi1), centered(lo2, hi2)};
}

// ---------------------------------------------------------------------------
// Wave states

WaveState init_wave(const SurfaceSpec& S, const Density& f,
                    const FrequencyGrid& grid, int supersample) {
  require(grid.n == S.n(), ErrorKind::validation,
          "init_wave: grid/surface dimension mismatch");
  require(supersample >= 1 && supersample <= 8, ErrorKind::validation,
          "init_wave: supersample must be in [1, 8]");
  WaveState w;
  w.grid = grid;
  w.surface = std::make_shared<SurfaceSpec>(S);
  const std::size_t N = grid.size();
  w.amplitudes.assign(N, cplx(0, 0));
  w.phase.assign(N, 0.0);
  w.mask.assign(N, 0);
  const int n = grid.n;
  const int sub = supersample;
  std::size_t subcount = 1;
  for (int d = 0; d < n; ++d) subcount *= (std::size_t)sub;

  Vec vlo = Vec::Constant(n, std::numeric_limits<double>::infinity());
  Vec vhi = Vec::Constant(n, -std::numeric_limits<double>::infinity());
  std::size_t inside = 0;
  for (std::size_t k = 0; k < N; ++k) {
    const Vec xi = grid.node(k);
    if (!S.D_tilde.contains(xi)) {
      const cplx fv = f(xi);
      require(std::abs(fv) == 0.0, ErrorKind::validation,
              "init_wave: density support leaks outside the enlarged domain "
              "(margin violated)");
      continue;
    }
    ++inside;
    w.mask[k] = 1;
    w.phase[k] = S.phi(xi);
    const Vec g = S.grad(xi);
    for (int d = 0; d < n; ++d) {
      vlo(d) = std::min(vlo(d), g(d));
      vhi(d) = std::max(vhi(d), g(d));
    }
    cplx fv(0, 0);
    if (sub == 1) {
      fv = f(xi);
    } else {
      std::size_t idx[8];
      for (std::size_t s = 0; s < subcount; ++s) {
        unflatten(s, n, (std::size_t)sub, idx);
        Vec p = xi;
        for (int d = 0; d < n; ++d)
          p(d) += grid.dxi(d) * (((double)idx[d] + 0.5) / sub - 0.5);
        fv += f(p);
      }
      fv /= (double)subcount;
    }
    const double wgt = std::sqrt(1.0 + g.squaredNorm());
    w.amplitudes[k] = fv * wgt;
  }
  require(inside > 0, ErrorKind::validation,
          "init_wave: grid resolves no nodes inside the enlarged domain");
  w.vel_lo = vlo;
  w.vel_hi = vhi;
  w.time = 0.0;
  return w;
}

WaveState evolve(const WaveState& w, double dt) {
  WaveState out = w;
  const std::size_t N = out.amplitudes.size();
  for_each_index(N, Exec::parallel, [&](std::size_t k) {
    if (out.mask[k]) out.amplitudes[k] *= std::polar(1.0, dt * out.phase[k]);
  });
  out.time = w.time + dt;
  return out;
}

double mass(const WaveState& w) {
  const double cv = w.grid.cell_volume();
  const double s =
      block_sum(w.amplitudes.size(), Exec::parallel,
                [&](std::size_t k) { return std::norm(w.amplitudes[k]); });
  return s * cv;
}

void normalize_mass(WaveState& w, double target) {
  require(target > 0, ErrorKind::validation,
          "normalize_mass: target must be positive");
  const double m = mass(w);
  require(m > 0, ErrorKind::validation,
          "normalize_mass: zero state has no normalization");
  const double scale = std::sqrt(target / m);
  for (auto& a : w.amplitudes) a *= scale;
}

double margin(const WaveState& w) {
  require(w.surface != nullptr, ErrorKind::validation,
          "margin: state has no surface");
  double best = std::numeric_limits<double>::infinity();
  const std::size_t N = w.amplitudes.size();
  for (std::size_t k = 0; k < N; ++k) {
    if (w.amplitudes[k] == cplx(0, 0)) continue;
    best = std::min(best, w.surface->D_tilde.dist_to_complement(w.grid.node(k)));
  }
  return best;
}

double margin(const WaveState& w1, const WaveState& w2, int k) {
  require(k == 1 || k == 2, ErrorKind::validation,
          "margin: side index must be 1 or 2");
  return k == 1 ? margin(w1) : margin(w2);
}

// Fills `out` with fold-signed amplitudes advanced to absolute time t.
static void folded_amplitudes(const WaveState& w, double t,
                              std::vector<cplx>& out) {
  const std::size_t N = w.amplitudes.size();
  const int n = w.grid.n;
  const std::size_t res = w.grid.res;
  const double dt = t - w.time;
  out.resize(N);
  for_each_index(N, Exec::parallel, [&](std::size_t k) {
    std::size_t idx[8];
    unflatten(k, n, res, idx);
    cplx a = w.amplitudes[k];
    if (w.mask[k] && dt != 0.0) a *= std::polar(1.0, dt * w.phase[k]);
    out[k] = (double)index_parity(idx, n) * a;
  });
}

std::vector<cplx> physical_field(const WaveState& w, double t, Exec exec) {
  const int n = w.grid.n;
  const std::size_t res = w.grid.res;
  std::vector<cplx> field;
  folded_amplitudes(w, t, field);
  fft_nd(field, n, res, +1, exec);
  const double cv = w.grid.cell_volume();
  // Per-axis twiddle e^{i x_j ximin}, ximin the first cell center.
  std::vector<std::vector<cplx>> tw(n, std::vector<cplx>(res));
  for (int d = 0; d < n; ++d) {
    const double ximin = w.grid.lo(d) + 0.5 * w.grid.dxi(d);
    const double DX = w.grid.dx(d);
    for (std::size_t j = 0; j < res; ++j)
      tw[d][j] = std::polar(1.0, ((double)j - (double)(res / 2)) * DX * ximin);
  }
  for_each_index(field.size(), exec, [&](std::size_t j) {
    std::size_t idx[8];
    unflatten(j, n, res, idx);
    cplx t2 = cv;
    for (int d = 0; d < n; ++d) t2 *= tw[d][idx[d]];
    field[j] *= t2;
  });
  return field;
}

// ---------------------------------------------------------------------------
// Bilinear norms

std::vector<double> bilinear_lp_norms(const WaveState& w1, const WaveState& w2,
                                      const CubeRegion& Q,
                                      const std::vector<double>& p_list,
                                      int t_samples, Exec exec) {
  require(w1.grid.compatible_with(w2.grid), ErrorKind::validation,
          "bilinear norm: waves live on incompatible grids");
  const int n = w1.grid.n;
  require((int)Q.center.size() == n + 1, ErrorKind::validation,
          "bilinear norm: cube center must have n+1 components");
  require(Q.side > 0 && Q.alpha > 0, ErrorKind::validation,
          "bilinear norm: cube side and dilation must be positive");
  require(!p_list.empty(), ErrorKind::validation,
          "bilinear norm: need at least one exponent");
  for (double p : p_list)
    require(p > 0, ErrorKind::validation,
            "bilinear norm: exponents must be positive");
  const std::size_t res = w1.grid.res;
  if (t_samples <= 0) t_samples = (int)res;  // default: spatial resolution
  require(t_samples >= 2, ErrorKind::validation,
          "bilinear norm: need at least 2 time slices");

  const double side = Q.effective_side();
  // Aliasing guard: the periodic window must cover twice the cube side times
  // the velocity spread of each wave, and the cube itself.
  for (const WaveState* w : {&w1, &w2}) {
    const double need = 2.0 * side * w->velocity_diam();
    for (int d = 0; d < n; ++d) {
      const double win = w->grid.window(d);
      if (win < need || win < side)
        fail_numeric(
            "bilinear norm: spatial window too small for this cube "
            "(aliasing guard 2 R diam(grad phi) violated)");
    }
  }

  // Spatial index ranges of the cube (no periodic wrap allowed).
  std::vector<std::size_t> jlo(n), jcount(n);
  std::size_t count = 1;
  for (int d = 0; d < n; ++d) {
    const double DX = w1.grid.dx(d);
    const double a = Q.center(d) - 0.5 * side;
    const double b = Q.center(d) + 0.5 * side;
    const double flo = std::ceil(a / DX + (double)(res / 2) - 1e-12);
    const double fhi = std::floor(b / DX + (double)(res / 2) + 1e-12);
    if (flo < 0 || fhi > (double)(res - 1))
      fail_numeric("bilinear norm: cube exceeds the spatial grid coverage");
    jlo[d] = (std::size_t)flo;
    jcount[d] = fhi < flo ? 0 : (std::size_t)(fhi - flo) + 1;
    count *= jcount[d];
  }
  std::vector<double> norms(p_list.size(), 0.0);
  if (count == 0) return norms;

  // Flat spatial indices covered by the cube.
  std::vector<std::size_t> cube(count);
  {
    std::size_t idx[8];
    for (std::size_t c = 0; c < count; ++c) {
      std::size_t rem = c;
      for (int d = n - 1; d >= 0; --d) {
        idx[d] = jlo[d] + rem % jcount[d];
        rem /= jcount[d];
      }
      std::size_t flat = 0;
      for (int d = 0; d < n; ++d) flat = flat * res + idx[d];
      cube[c] = flat;
    }
  }

  const double t0 = Q.center(n) - 0.5 * side;
  const double dt = side / (double)(t_samples - 1);
  std::vector<cplx> base1, base2;
  folded_amplitudes(w1, t0, base1);
  folded_amplitudes(w2, t0, base2);
  const std::size_t N = base1.size();
  std::vector<cplx> step1(N), step2(N);
  for_each_index(N, exec, [&](std::size_t k) {
    step1[k] = w1.mask[k] ? std::polar(1.0, dt * w1.phase[k]) : cplx(1, 0);
    step2[k] = w2.mask[k] ? std::polar(1.0, dt * w2.phase[k]) : cplx(1, 0);
  });

  std::vector<double> sums(p_list.size(), 0.0);
  std::vector<cplx> f1(N), f2(N);
  std::vector<double> mod(count);
  for (int s = 0; s < t_samples; ++s) {
    std::copy(base1.begin(), base1.end(), f1.begin());
    std::copy(base2.begin(), base2.end(), f2.begin());
    fft_nd(f1, n, res, +1, exec);
    fft_nd(f2, n, res, +1, exec);
    for_each_index(count, exec, [&](std::size_t c) {
      mod[c] = std::abs(f1[cube[c]]) * std::abs(f2[cube[c]]);
    });
    const double wt = (s == 0 || s == t_samples - 1) ? 0.5 : 1.0;
    for (std::size_t i = 0; i < p_list.size(); ++i) {
      const double p = p_list[i];
      sums[i] += wt * block_sum(count, exec, [&](std::size_t c) {
                   return std::pow(mod[c], p);
                 });
    }
    if (s + 1 < t_samples) {
      for_each_index(N, exec, [&](std::size_t k) {
        base1[k] *= step1[k];
        base2[k] *= step2[k];
      });
    }
  }
  const double cv = w1.grid.cell_volume() * w2.grid.cell_volume();
  const double dxvol = w1.grid.x_cell_volume();
  for (std::size_t i = 0; i < p_list.size(); ++i)
    norms[i] = cv * std::pow(dxvol * dt * sums[i], 1.0 / p_list[i]);
  return norms;
}

double bilinear_lp_norm(const WaveState& w1, const WaveState& w2,
                        const CubeRegion& Q, double p, int t_samples,
                        Exec exec) {
  return bilinear_lp_norms(w1, w2, Q, {p}, t_samples, exec)[0];
}

// ---------------------------------------------------------------------------
// Scaling exponents

double fit_ratio_slope(const std::vector<double>& Rs,
                       const std::vector<double>& ratios) {
  require(Rs.size() == ratios.size() && Rs.size() >= 3, ErrorKind::validation,
          "scaling fit: need at least 3 scales");
  return fit_loglog(Rs, ratios).slope;
}

ScalingResult estimate_scaling_exponent(const PairGenerator& gen, double p,
                                        const std::vector<double>& R_list,
                                        Exec exec) {
  require(R_list.size() >= 3, ErrorKind::validation,
          "scaling: need at least 3 dyadic scales");
  for (std::size_t i = 0; i < R_list.size(); ++i) {
    const double R = R_list[i];
    require(R >= 4, ErrorKind::validation, "scaling: scales must be >= 4");
    const double k = std::round(std::log2(R));
    require(std::abs(R - std::exp2(k)) <= 1e-9 * R, ErrorKind::validation,
            "scaling: scales must be powers of two");
    if (i > 0)
      require(R > R_list[i - 1], ErrorKind::validation,
              "scaling: scales must be increasing");
  }
  ScalingResult out;
  std::vector<double> ratios;
  for (double R : R_list) {
    const auto tick = std::chrono::steady_clock::now();
    BilinearProblem prob = gen(R);
    const double m1 = mass(prob.w1);
    const double m2 = mass(prob.w2);
    require(m1 > 0 && m2 > 0, ErrorKind::validation,
            "scaling: generated data must have positive mass");
    const double norm =
        bilinear_lp_norms(prob.w1, prob.w2, prob.Q, {p}, prob.t_samples,
                          exec)[0];
    const auto tock = std::chrono::steady_clock::now();
    ScalingSample s;
    s.R = R;
    s.ratio = norm / std::sqrt(m1 * m2);
    s.mass1 = m1;
    s.mass2 = m2;
    s.runtime_ms =
        std::chrono::duration<double, std::milli>(tock - tick).count();
    require(s.ratio > 0, ErrorKind::numeric,
            "scaling: zero ratio cannot enter a log-log fit");
    out.samples.push_back(s);
    ratios.push_back(s.ratio);
  }
  out.slope = fit_ratio_slope(R_list, ratios);
  return out;
}

// ---------------------------------------------------------------------------
// Focusing data generators

// Plate densities for both sides: long axis along the intersection-curve
// tangent at the domain centers (center-sum translate), thin axis conormal.
static void plate_pair(const SurfaceSpec& S1, const SurfaceSpec& S2, double R,
                       Density& f1, Density& f2, json& meta) {
  require(S1.n() == S2.n(), ErrorKind::validation,
          "plate pair: dimension mismatch");
  require(S1.n() == 2, ErrorKind::validation,
          "plate pair: implemented for n = 2");
  require(R >= 4, ErrorKind::validation, "plate pair: R must be >= 4");
  const Vec c1 = S1.D.center, c2 = S2.D.center;
  // The curve tangent at c1 for the translate h = lift1(c1) + lift2(c2) is
  // perpendicular to grad F(c1) = grad phi1(c1) - grad phi2(c2).
  const Vec gF = S1.grad(c1) - S2.grad(c2);
  require(gF.norm() > 1e-10, ErrorKind::validation,
          "plate pair: surfaces are tangent at the domain centers, no "
          "transversal curve direction");
  Vec tang(2), conorm(2);
  conorm = gF.normalized();
  tang << -conorm(1), conorm(0);
  const double half_t = 0.5 / std::sqrt(R);
  const double half_n = 0.5 / R;

  auto plate = [&](const Vec& c, const Domain& D) {
    for (double st : {-1.0, 1.0})
      for (double sn : {-1.0, 1.0}) {
        const Vec corner = c + st * half_t * tang + sn * half_n * conorm;
        require(D.contains(corner), ErrorKind::validation,
                "plate pair: plate does not fit inside the base domain; "
                "reduce R^{-1/2} against the domain radius");
      }
    const Vec cc = c, tt = tang, nn = conorm;
    return Density([cc, tt, nn, half_t, half_n](const Vec& xi) {
      const Vec d = xi - cc;
      const bool in = std::abs(d.dot(tt)) <= half_t &&
                      std::abs(d.dot(nn)) <= half_n;
      return cplx(in ? 1.0 : 0.0, 0.0);
    });
  };
  f1 = plate(c1, S1.D);
  f2 = plate(c2, S2.D);
  const double h3 = S1.phi(c1) + S2.phi(c2);
  meta = json{{"R", R},
              {"tangent", {tang(0), tang(1)}},
              {"conormal", {conorm(0), conorm(1)}},
              {"width_tangent", 2 * half_t},
              {"width_conormal", 2 * half_n},
              {"center1", {c1(0), c1(1)}},
              {"center2", {c2(0), c2(1)}},
              {"h", {c1(0) + c2(0), c1(1) + c2(1), h3}}};
}

WavePairData generate_knapp(const SurfaceSpec& S1, const SurfaceSpec& S2,
                            double R) {
  WavePairData out;
  out.S1 = S1;
  out.S2 = S2;
  plate_pair(S1, S2, R, out.f1, out.f2, out.meta);
  out.meta["kind"] = "knapp";
  return out;
}

WavePairData generate_lee_pair(double R) {
  Vec c1(2), c2(2);
  c1 << 1, 1;
  c2 << -1, -1;
  WavePairData out;
  out.S1 = make_surface("hyperbolic-paraboloid", json::object(),
                        Domain::make_ball(c1, 0.15), 0.05);
  out.S2 = make_surface("hyperbolic-paraboloid", json::object(),
                        Domain::make_ball(c2, 0.15), 0.05);
  plate_pair(out.S1, out.S2, R, out.f1, out.f2, out.meta);
  out.meta["kind"] = "lee";
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot IO

void write_spectral_snapshot(const std::string& path, const WaveState& w) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorKind::io, "snapshot: cannot open " + path);
  const std::uint32_t n = (std::uint32_t)w.grid.n;
  const std::uint32_t res = (std::uint32_t)w.grid.res;
  os.write((const char*)&n, sizeof n);
  os.write((const char*)&res, sizeof res);
  for (int d = 0; d < w.grid.n; ++d) {
    const double lo = w.grid.lo(d);
    const double hi = lo + (double)w.grid.res * w.grid.dxi(d);
    os.write((const char*)&lo, sizeof lo);
    os.write((const char*)&hi, sizeof hi);
  }
  for (const cplx& a : w.amplitudes) {
    const float re = (float)a.real(), im = (float)a.imag();
    os.write((const char*)&re, sizeof re);
    os.write((const char*)&im, sizeof im);
  }
  require(os.good(), ErrorKind::io, "snapshot: write failed for " + path);
}

SpectralSnapshot read_spectral_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::io, "snapshot: cannot open " + path);
  std::uint32_t n = 0, res = 0;
  is.read((char*)&n, sizeof n);
  is.read((char*)&res, sizeof res);
  require(is.good() && n >= 1 && n <= 6 && is_pow2(res) && res >= 2,
          ErrorKind::io, "snapshot: corrupt header in " + path);
  SpectralSnapshot snap;
  snap.grid.n = (int)n;
  snap.grid.res = res;
  snap.grid.lo = Vec((int)n);
  snap.grid.dxi = Vec((int)n);
  for (std::uint32_t d = 0; d < n; ++d) {
    double lo = 0, hi = 0;
    is.read((char*)&lo, sizeof lo);
    is.read((char*)&hi, sizeof hi);
    require(is.good() && hi > lo, ErrorKind::io,
            "snapshot: corrupt extent in " + path);
    snap.grid.lo((int)d) = lo;
    snap.grid.dxi((int)d) = (hi - lo) / (double)res;
  }
  snap.amplitudes.resize(snap.grid.size());
  for (cplx& a : snap.amplitudes) {
    float re = 0, im = 0;
    is.read((char*)&re, sizeof re);
    is.read((char*)&im, sizeof im);
    require(is.good(), ErrorKind::io, "snapshot: truncated data in " + path);
    a = cplx(re, im);
  }
  return snap;
}

}  // namespace bilin
