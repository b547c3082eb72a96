#include "bilin/energy.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>

#include "bilin/errors.hpp"
#include "bilin/parallel.hpp"

namespace bilin {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr int kHashCellsPerAxis = 2048;

long long hash_key(int ix, int iy, int iz) {
  return ((long long)ix * kHashCellsPerAxis + iy) * kHashCellsPerAxis + iz;
}

// Least-squares slope of y against x.
double lsq_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double m = (double)x.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = m * sxx - sx * sx;
  require(std::abs(den) > 1e-300, ErrorKind::numeric,
          "slope fit: degenerate abscissa");
  return (m * sxy - sx * sy) / den;
}

// C-infinity transition: 0 for u <= 0, 1 for u >= 1.
double smooth_step(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / u);
  const double b = std::exp(-1.0 / (1.0 - u));
  return a / (a + b);
}

// Radial bump profile: 1 for s <= 1 - rolloff, 0 for s >= 1.
double bump_profile(double s, double rolloff) {
  return smooth_step((1.0 - s) / rolloff);
}

}  // namespace

// ---------------------------------------------------------------------------
// ThickenedSurface

ThickenedSurface thicken(const ConeCloud& cloud, double r) {
  require(!cloud.points.empty(), ErrorKind::validation,
          "thicken: empty cone cloud");
  require(std::isfinite(r) && r > 0.0, ErrorKind::validation,
          "thicken: thickness must be positive");
  require(cloud.points.front().pos.size() == 3, ErrorKind::validation,
          "thicken: the cone cloud must live in R^3 (n = 2)");
  require(cloud.patch_radius > 0.0, ErrorKind::validation,
          "thicken: cone cloud carries no patch radius");

  ThickenedSurface S;
  S.cloud = cloud;
  S.r = r;
  S.patch_validity = 2.0 * cloud.patch_radius;
  double amin = std::numeric_limits<double>::infinity();
  for (const ConePoint& p : cloud.points) amin = std::min(amin, std::abs(p.alpha));
  S.apex_exclusion = 0.5 * amin;

  S.cell = std::sqrt(S.patch_validity * S.patch_validity + r * r) * 1.0001;
  Vec lo = cloud.points.front().pos, hi = lo;
  for (const ConePoint& p : cloud.points) {
    lo = lo.cwiseMin(p.pos);
    hi = hi.cwiseMax(p.pos);
  }
  S.lo = (lo.array() - S.cell).matrix();
  for (int a = 0; a < 3; ++a)
    require((hi(a) - S.lo(a)) / S.cell < (double)(kHashCellsPerAxis - 2),
            ErrorKind::numeric, "thicken: cloud extent too large for the hash grid");

  std::vector<std::pair<long long, int>> entries;
  entries.reserve(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec& p = cloud.points[i].pos;
    const int ix = (int)std::floor((p(0) - S.lo(0)) / S.cell);
    const int iy = (int)std::floor((p(1) - S.lo(1)) / S.cell);
    const int iz = (int)std::floor((p(2) - S.lo(2)) / S.cell);
    entries.push_back({hash_key(ix, iy, iz), (int)i});
  }
  std::sort(entries.begin(), entries.end());
  for (const auto& [key, idx] : entries) {
    if (S.bucket_keys.empty() || S.bucket_keys.back() != key) {
      S.bucket_keys.push_back(key);
      S.bucket_pts.emplace_back();
    }
    S.bucket_pts.back().push_back(idx);
  }
  return S;
}

bool ThickenedSurface::contains(const Vec& p) const {
  if (p.norm() < apex_exclusion) return false;
  const double search2 = cell * cell;
  const int ix = (int)std::floor((p(0) - lo(0)) / cell);
  const int iy = (int)std::floor((p(1) - lo(1)) / cell);
  const int iz = (int)std::floor((p(2) - lo(2)) / cell);
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        const int jx = ix + dx, jy = iy + dy, jz = iz + dz;
        if (jx < 0 || jy < 0 || jz < 0 || jx >= kHashCellsPerAxis ||
            jy >= kHashCellsPerAxis || jz >= kHashCellsPerAxis)
          continue;
        const long long key = hash_key(jx, jy, jz);
        const auto it =
            std::lower_bound(bucket_keys.begin(), bucket_keys.end(), key);
        if (it == bucket_keys.end() || *it != key) continue;
        const auto& pts = bucket_pts[(std::size_t)(it - bucket_keys.begin())];
        for (int i : pts) {
          const ConePoint& q = cloud.points[(std::size_t)i];
          const double d0 = p(0) - q.pos(0);
          const double d1 = p(1) - q.pos(1);
          const double d2 = p(2) - q.pos(2);
          const double dd = d0 * d0 + d1 * d1 + d2 * d2;
          if (dd > search2) continue;
          const double fn = q.face_normal.squaredNorm();
          if (fn < 0.5) {
            // Degenerate patch: Euclidean ball membership.
            if (dd <= r * r) return true;
            continue;
          }
          const double u =
              d0 * q.face_normal(0) + d1 * q.face_normal(1) + d2 * q.face_normal(2);
          if (std::abs(u) > r) continue;
          if (dd - u * u <= patch_validity * patch_validity) return true;
        }
      }
  return false;
}

std::vector<char> ThickenedSurface::slice_mask(const FrequencyGrid& grid,
                                               double t, Exec exec) const {
  require(grid.n == 2, ErrorKind::validation,
          "slice_mask: the grid must be two-dimensional");
  const std::size_t res = grid.res;
  std::vector<char> mask(res * res, 0);

  // Spatial bounding box of the cloud inflated by the search radius; nodes
  // outside it cannot be members.
  double bx0 = std::numeric_limits<double>::infinity(), bx1 = -bx0;
  double by0 = bx0, by1 = -bx0;
  for (const ConePoint& p : cloud.points) {
    bx0 = std::min(bx0, p.pos(0));
    bx1 = std::max(bx1, p.pos(0));
    by0 = std::min(by0, p.pos(1));
    by1 = std::max(by1, p.pos(1));
  }
  const double half = (double)res / 2.0;
  const double dx0 = grid.dx(0), dx1 = grid.dx(1);
  auto lo_idx = [&](double v, double d) {
    return std::max<long>(0, (long)std::ceil(v / d + half));
  };
  auto hi_idx = [&](double v, double d) {
    return std::min<long>((long)res - 1, (long)std::floor(v / d + half));
  };
  const long i0_lo = lo_idx(bx0 - cell, dx0), i0_hi = hi_idx(bx1 + cell, dx0);
  const long i1_lo = lo_idx(by0 - cell, dx1), i1_hi = hi_idx(by1 + cell, dx1);
  if (i0_lo > i0_hi || i1_lo > i1_hi) return mask;

  const std::size_t rows = (std::size_t)(i0_hi - i0_lo + 1);
  for_each_index(rows, exec, [&](std::size_t rr) {
    const long j0 = i0_lo + (long)rr;
    Vec p(3);
    p(0) = ((double)j0 - half) * dx0;
    p(2) = t;
    for (long j1 = i1_lo; j1 <= i1_hi; ++j1) {
      p(1) = ((double)j1 - half) * dx1;
      if (contains(p)) mask[(std::size_t)j0 * res + (std::size_t)j1] = 1;
    }
  });
  return mask;
}

double ThickenedSurface::t_lo() const {
  double v = std::numeric_limits<double>::infinity();
  for (const ConePoint& p : cloud.points) v = std::min(v, p.pos(2));
  return v - r;
}

double ThickenedSurface::t_hi() const {
  double v = -std::numeric_limits<double>::infinity();
  for (const ConePoint& p : cloud.points) v = std::max(v, p.pos(2));
  return v + r;
}

// ---------------------------------------------------------------------------
// Energy in a neighborhood.

double energy_in_neighborhood(const WaveState& psi, const ThickenedSurface& S,
                              int t_samples, Exec exec) {
  require(psi.grid.n == 2, ErrorKind::validation,
          "energy_in_neighborhood: the wave must live on a 2-d frequency grid");
  require(t_samples >= 2, ErrorKind::validation,
          "energy_in_neighborhood: need at least two time samples");
  for (int a = 0; a < 2; ++a) {
    double b = 0.0;
    for (const ConePoint& p : S.cloud.points) b = std::max(b, std::abs(p.pos(a)));
    require(b <= 0.5 * psi.grid.window(a) - psi.grid.dx(a), ErrorKind::numeric,
            "energy_in_neighborhood: the cone cloud escapes the spatial "
            "window");
  }

  const double T0 = S.t_lo(), T1 = S.t_hi();
  const double dt = (T1 - T0) / (double)t_samples;
  const double xvol = psi.grid.x_cell_volume();
  const double norm = std::pow(kTwoPi, (double)psi.grid.n);

  double total = 0.0;
  for (int k = 0; k < t_samples; ++k) {
    const double t = T0 + ((double)k + 0.5) * dt;
    const std::vector<cplx> field = physical_field(psi, t, exec);
    const std::vector<char> mask = S.slice_mask(psi.grid, t, exec);
    total += block_sum(field.size(), exec, [&](std::size_t i) {
      return mask[i] ? std::norm(field[i]) : 0.0;
    });
  }
  return std::sqrt(total * xvol * dt / norm);
}

// ---------------------------------------------------------------------------
// Thickness sweep.

EnergySweep energy_ratio_sweep(const std::vector<WaveState>& family,
                               const SurfaceSpec& S1, const SurfaceSpec& S2,
                               const Vec& h, const std::vector<double>& alphas,
                               const std::vector<double>& r_list,
                               int t_samples, Exec exec) {
  require(!family.empty(), ErrorKind::validation,
          "energy_ratio_sweep: empty wave family");
  require(t_samples >= 2, ErrorKind::validation,
          "energy_ratio_sweep: need at least two time samples");
  require(r_list.size() >= 2, ErrorKind::validation,
          "energy_ratio_sweep: need at least two thicknesses");
  for (std::size_t i = 0; i < r_list.size(); ++i) {
    require(r_list[i] > 0.0, ErrorKind::validation,
            "energy_ratio_sweep: thicknesses must be positive");
    require(i == 0 || r_list[i] > r_list[i - 1], ErrorKind::validation,
            "energy_ratio_sweep: thicknesses must be strictly increasing");
  }

  EnergySweep sw;
  sw.r = r_list;
  sw.details = json::object();

  ConditionOptions opt;
  opt.exec = exec;
  const ConditionReport lfw = check_LFW(S1, S2, {h}, opt);
  sw.lfw_pass = lfw.pass;
  sw.lfw_infimum = lfw.infimum;
  if (!lfw.pass)
    sw.details["warning"] =
        "transversality precondition (LFW) fails; control configuration";

  const ConeCloud cloud = normal_cone_samples(S1, S2, h, alphas);

  for (const WaveState& w : family) {
    const double m = mass(w);
    require(m > 0.0, ErrorKind::validation,
            "energy_ratio_sweep: zero-mass wave in the family");
    sw.mass = std::max(sw.mass, m);
  }

  for (double r : r_list) {
    const ThickenedSurface S = thicken(cloud, r);
    double best = 0.0;
    for (const WaveState& w : family) {
      const double e = energy_in_neighborhood(w, S, t_samples, exec);
      best = std::max(best, e / std::sqrt(mass(w)));
    }
    require(best > 0.0, ErrorKind::numeric,
            "energy_ratio_sweep: zero energy at some thickness (the family "
            "never meets the neighborhood)");
    sw.energy.push_back(best);
  }

  sw.running.assign(r_list.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < r_list.size(); ++i) {
    lx.push_back(std::log(r_list[i]));
    ly.push_back(std::log(sw.energy[i]));
    if (i > 0)
      sw.running[i] = (ly[i] - ly[i - 1]) / (lx[i] - lx[i - 1]);
  }
  sw.slope = lsq_slope(lx, ly);
  return sw;
}

void write_energy_csv(const std::string& path, const EnergySweep& sweep) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  require(f != nullptr, ErrorKind::io,
          "energy csv: cannot open CSV for writing: " + path);
  std::fprintf(f, "r,energy,mass,slope_running\n");
  for (std::size_t i = 0; i < sweep.r.size(); ++i)
    std::fprintf(f, "%.17g,%.17g,%.17g,%.17g\n", sweep.r[i], sweep.energy[i],
                 sweep.mass, sweep.running[i]);
  std::fclose(f);
}

// ---------------------------------------------------------------------------
// Kernel probe.

KernelProbeReport kernel_decay_probe(const SurfaceSpec& S2,
                                     const std::vector<Vec>& probes,
                                     double rolloff, double exclusion,
                                     int quad_res, int dir_samples, Exec exec) {
  const int n = S2.n();
  require(n >= 1 && n <= 3, ErrorKind::validation,
          "kernel_decay_probe: surface dimension must be 1, 2, or 3");
  require(!probes.empty(), ErrorKind::validation,
          "kernel_decay_probe: empty probe list");
  for (const Vec& p : probes)
    require((int)p.size() == n + 1, ErrorKind::validation,
            "kernel_decay_probe: probe dimension must be n+1");
  require(rolloff > 0.0 && rolloff <= 0.5, ErrorKind::validation,
          "kernel_decay_probe: roll-off must be in (0, 1/2]");
  require(quad_res >= 8, ErrorKind::validation,
          "kernel_decay_probe: quadrature resolution too small (minimum 8)");
  require(dir_samples >= 2, ErrorKind::validation,
          "kernel_decay_probe: need at least two direction samples per axis");
  require(exclusion >= 0.0 && exclusion < 1.0, ErrorKind::validation,
          "kernel_decay_probe: exclusion must be in [0, 1)");

  Vec blo, bhi;
  S2.D.bounds(blo, bhi);

  // The window: radial bump on a ball domain, per-axis product on a box.
  auto eta = [&](const Vec& xi) -> double {
    if (S2.D.kind == DomainKind::ball) {
      const double s = (xi - S2.D.center).norm() / S2.D.radius;
      return bump_profile(s, rolloff);
    }
    double v = 1.0;
    for (int a = 0; a < n; ++a)
      v *= bump_profile(std::abs(xi(a) - S2.D.center(a)) / S2.D.halves(a),
                        rolloff);
    return v;
  };

  // Normal directions of S2 sampled on a lattice over the domain.
  std::vector<Vec> normals;
  {
    std::vector<long> idx(n, 0);
    const long total = (long)std::pow((double)dir_samples, n);
    for (long f = 0; f < total; ++f) {
      long rem = f;
      Vec xi(n);
      for (int a = n - 1; a >= 0; --a) {
        idx[(std::size_t)a] = rem % dir_samples;
        rem /= dir_samples;
      }
      for (int a = 0; a < n; ++a)
        xi(a) = blo(a) + (bhi(a) - blo(a)) *
                             (((double)idx[(std::size_t)a] + 0.5) /
                              (double)dir_samples);
      if (!S2.D.contains(xi)) continue;
      const Vec g = S2.grad(xi);
      Vec u(n + 1);
      for (int a = 0; a < n; ++a) u(a) = -g(a);
      u(n) = 1.0;
      normals.push_back(u / u.norm());
    }
  }
  require(!normals.empty(), ErrorKind::numeric,
          "kernel_decay_probe: no direction samples landed in the domain");

  KernelProbeReport rep;
  rep.details = json::object();
  json sines = json::array();
  for (const Vec& p : probes) {
    const double pn = p.norm();
    if (pn <= 1e-12) {
      sines.push_back(1.0);
      continue;
    }
    double worst = 1.0;
    for (const Vec& u : normals) {
      const double c = p.dot(u) / pn;
      worst = std::min(worst, std::sqrt(std::max(0.0, 1.0 - c * c)));
    }
    sines.push_back(worst);
    require(worst >= exclusion, ErrorKind::validation,
            "kernel_decay_probe: probe lies inside the excluded neighborhood "
            "of the normal cone");
  }
  rep.details["probe_sine"] = sines;

  // Midpoint quadrature lattice over the domain bounding box.
  const long total = (long)std::pow((double)quad_res, n);
  std::vector<double> wts((std::size_t)total, 0.0);
  std::vector<double> phis((std::size_t)total, 0.0);
  std::vector<Vec> nodes((std::size_t)total, Vec(n));
  double cellv = 1.0;
  for (int a = 0; a < n; ++a) cellv *= (bhi(a) - blo(a)) / (double)quad_res;
  for_each_index((std::size_t)total, exec, [&](std::size_t f) {
    long rem = (long)f;
    Vec xi(n);
    for (int a = n - 1; a >= 0; --a) {
      xi(a) = blo(a) + (bhi(a) - blo(a)) *
                           (((double)(rem % quad_res) + 0.5) / (double)quad_res);
      rem /= quad_res;
    }
    const double w = eta(xi);
    nodes[f] = xi;
    wts[f] = w;
    if (w > 0.0) phis[f] = S2.phi(xi);
  });

  rep.eta_integral =
      block_sum(wts.size(), exec, [&](std::size_t i) { return wts[i]; }) *
      cellv;

  for (const Vec& p : probes) {
    const cplx acc =
        block_sum(wts.size(), exec,
                  [&](std::size_t i) -> cplx {
                    if (wts[i] == 0.0) return cplx(0.0, 0.0);
                    double phase = p(n) * phis[i];
                    for (int a = 0; a < n; ++a) phase += p(a) * nodes[i](a);
                    return wts[i] * std::polar(1.0, -phase);
                  },
                  cplx(0.0, 0.0));
    rep.values.push_back(std::abs(acc) * cellv);
  }

  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const double pn = probes[i].norm();
    if (pn <= 1e-12) continue;
    const double v = std::max(rep.values[i], 1e-280);
    lx.push_back(std::log(pn));
    ly.push_back(std::log(v));
  }
  if (lx.size() >= 2) {
    rep.fitted_exponent = -lsq_slope(lx, ly);
  } else {
    rep.details["fit"] = "too few nonzero probes to fit";
  }
  return rep;
}

}  // namespace bilin
