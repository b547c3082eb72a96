#include "bilin/wavepacket.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <unordered_map>

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

double wrap_periodic(double u, double W) { return u - W * std::round(u / W); }

// Gauss-Legendre nodes/weights on [-1, 1].
void gauss_legendre(int k, std::vector<double>& x, std::vector<double>& w) {
  x.assign(k, 0.0);
  w.assign(k, 0.0);
  for (int i = 0; i < (k + 1) / 2; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (k + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < k; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      dp = k * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[k - 1 - i] = z;
    w[i] = w[k - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

double smooth_ball_weight(double t) {
  return t < 1.0 ? std::exp(-1.0 / (1.0 - t * t)) : 0.0;
}

double sinc(double z) { return z == 0.0 ? 1.0 : std::sin(z) / z; }

constexpr double kPacketChop = 1e-14;   // relative amplitude chop at synthesis
constexpr double kBumpYStep = 0.005;    // 1-d profile table resolution
constexpr double kBumpYMax = 300.0;     // profile support cap in lattice units
constexpr double kFarC0 = 2.0;          // recorded calibration exponent
constexpr double kLatticeTail = 48.0;   // spatial lattice reach past the window

}  // namespace

// ---------------------------------------------------------------------------
// BumpProfile

double BumpProfile::value1d(double y) const {
  y = std::abs(y) / ystep;
  const double fi = std::floor(y);
  const long i = (long)fi;
  const long ny = (long)table.size();
  if (i + 2 >= ny) return 0.0;
  const double t = y - fi;
  auto fetch = [&](long j) -> double {
    if (j < 0) j = -j;  // even profile
    return j < ny ? table[(std::size_t)j] : 0.0;
  };
  const double p0 = fetch(i - 1), p1 = fetch(i), p2 = fetch(i + 1),
               p3 = fetch(i + 2);
  const double v =
      0.5 * (2.0 * p1 + (-p0 + p2) * t +
             (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
             (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
  return v > 0.0 ? v : 0.0;  // the profile is nonnegative by construction
}

double BumpProfile::value(const Vec& y) const {
  double v = 1.0;
  for (int d = 0; d < (int)y.size(); ++d) v *= value1d(y(d));
  return v;
}

double BumpProfile::spectral_radius() const {
  return 2.0 * (a + mu * b2) * std::sqrt((double)n);
}

json BumpProfile::to_json() const {
  return json{{"n", n},
              {"N", N},
              {"mu", mu},
              {"smooth_half_bandwidth", a},
              {"sinc_half_bandwidth", b2},
              {"spectral_radius", spectral_radius()},
              {"table_step", ystep},
              {"table_extent", ymax}};
}

const BumpProfile& make_bump(int n, int N) {
  require(n >= 1 && n <= 3, ErrorKind::validation,
          "bump profile: dimension must be in [1, 3]");
  require(N >= 1 && N <= 16, ErrorKind::validation,
          "bump profile: decay order must be in [1, 16]");
  static std::map<std::pair<int, int>, BumpProfile> cache;
  static std::mutex mu_cache;
  std::lock_guard<std::mutex> lock(mu_cache);
  auto it = cache.find({n, N});
  if (it != cache.end()) return it->second;

  BumpProfile b;
  b.n = n;
  b.N = N;
  b.mu = (N + 1) / 2;
  // Per-axis bandwidth budget 1/(2 sqrt(n)) keeps the spectrum of the
  // realized square profile inside the unit ball; 60% of the budget goes
  // to the smooth factor and 40% to the sinc factors that set the
  // polynomial decay order.
  const double budget = 0.5 / std::sqrt((double)n);
  b.a = 0.6 * budget;
  b.b2 = 0.4 * budget / (double)b.mu;
  b.ystep = kBumpYStep;
  b.ymax = kBumpYMax;
  const std::size_t ny = (std::size_t)std::llround(b.ymax / b.ystep) + 1;

  // Smooth factor g1(y) = 2a * int_0^1 exp(-1/(1-u^2)) cos(a u y) du,
  // Simpson in u with a rotation recurrence along the uniform y table.
  const int nu = 4096;
  std::vector<double> g1(ny, 0.0);
  const double du = 1.0 / nu;
  for (int iu = 0; iu <= nu; ++iu) {
    const double u = iu * du;
    const double env = u < 1.0 ? std::exp(-1.0 / (1.0 - u * u)) : 0.0;
    if (env == 0.0) continue;
    const double sw = (iu == 0 || iu == nu) ? 1.0 : (iu % 2 ? 4.0 : 2.0);
    const double coef = 2.0 * b.a * env * sw * du / 3.0;
    const double theta = b.a * u * b.ystep;
    const double ct = std::cos(theta), st = std::sin(theta);
    double cy = 1.0, sy = 0.0;
    for (std::size_t iy = 0; iy < ny; ++iy) {
      g1[iy] += coef * cy;
      const double cn = cy * ct - sy * st;
      sy = sy * ct + cy * st;
      cy = cn;
    }
  }

  b.table.assign(ny, 0.0);
  for (std::size_t iy = 0; iy < ny; ++iy) {
    const double y = iy * b.ystep;
    double g = g1[iy];
    const double sc = sinc(b.b2 * y);
    for (int j = 0; j < b.mu; ++j) g *= sc;
    b.table[iy] = g * g;
  }
  // Full-line trapezoid of the even extension; Poisson summation then makes
  // the normalized profile an exact lattice partition of unity.
  double I = 0.0;
  for (std::size_t iy = 1; iy + 1 < ny; ++iy) I += b.table[iy];
  I = 2.0 * I * b.ystep + (b.table[0] + b.table[ny - 1]) * b.ystep;
  require(I > 0, ErrorKind::numeric, "bump profile: degenerate normalization");
  for (auto& v : b.table) v /= I;

  auto [pos, ok] = cache.emplace(std::make_pair(n, N), std::move(b));
  (void)ok;
  return pos->second;
}

// ---------------------------------------------------------------------------
// Tubes

double tube_cutoff(const Tube& T, const Vec& x, double t, int N) {
  Vec p = x - (T.x + T.velocity * t);
  return std::pow(1.0 + p.norm() / T.width, -(double)N);
}

double PacketDecomposition::eta_at(const Tube& T, std::size_t flat) const {
  const auto& g = source->grid;
  std::size_t idx[8];
  unflatten(flat, n, g.res, idx);
  double v = 1.0;
  for (int d = 0; d < n; ++d) {
    const double xj = ((double)idx[d] - (double)(g.res / 2)) * g.dx(d);
    v *= bump.value1d((xj - T.x(d)) / s);
  }
  return v;
}

// ---------------------------------------------------------------------------
// decompose

PacketDecomposition decompose(const WaveState& f, const CubeRegion& Q,
                              double c, int N, int n_omega, Exec exec) {
  require(f.surface != nullptr, ErrorKind::validation,
          "decompose: wave has no surface");
  const int n = f.grid.n;
  require(n >= 1 && n <= 2, ErrorKind::validation,
          "decompose: packet decomposition supports n <= 2");
  require((int)Q.center.size() == n + 1, ErrorKind::validation,
          "decompose: cube center must live in R^{n+1}");
  require(Q.side > 0 && Q.alpha > 0, ErrorKind::validation,
          "decompose: cube must have positive extent");
  const double R = Q.effective_side();
  require(R >= 16.0, ErrorKind::validation,
          "decompose: cube scale too small (need side >= 16)");
  require(c >= c_lower_bound(R) - 1e-12 && c <= kCUpperBound + 1e-12,
          ErrorKind::validation,
          "decompose: localization parameter outside the admissible window "
          "[0.5 R^{-1/4}, 0.25]");
  require(N >= 1 && N <= 16, ErrorKind::validation,
          "decompose: decay order must be in [1, 16]");
  require(n_omega >= 1 && n_omega <= 8, ErrorKind::validation,
          "decompose: quadrature order must be in [1, 8]");

  PacketDecomposition d;
  d.n = n;
  d.R = R;
  d.c = c;
  d.N = N;
  d.n_omega = n_omega;
  d.source = std::make_shared<WaveState>(f);
  d.Q = Q;
  d.bump = make_bump(n, N);

  // Dyadic scale r = 2^{-J} R in [sqrt(R), 2 sqrt(R)).
  double r = R;
  while (r >= 2.0 * std::sqrt(R)) r *= 0.5;
  d.r = r;
  d.s = r / (c * c);

  double dxi_max = 0.0, win_min = std::numeric_limits<double>::infinity();
  for (int dd = 0; dd < n; ++dd) {
    dxi_max = std::max(dxi_max, f.grid.dxi(dd));
    win_min = std::min(win_min, f.grid.window(dd));
  }
  require(dxi_max <= 0.25 / r + 1e-15, ErrorKind::validation,
          "decompose: grid too coarse to resolve the frequency cells "
          "(resolution error)");
  require(win_min >= R - 1e-9, ErrorKind::validation,
          "decompose: grid window does not cover the cube");

  d.source_mass = mass(f);
  require(d.source_mass > 0, ErrorKind::validation,
          "decompose: source wave has zero mass");
  d.source_margin = margin(f);
  const double spill = d.bump.spectral_radius() / d.s + 6.0 * dxi_max;
  require(d.source_margin > 2.0 * spill, ErrorKind::validation,
          "decompose: source margin too small for the packet spectral spill");

  const SurfaceSpec& S = *f.surface;

  // Frequency lattice r^{-1} Z^n intersected with the base domain, in
  // lexicographic order (ties in the Voronoi assignment keep the first hit).
  Vec blo(n), bhi(n);
  S.D.bounds(blo, bhi);
  std::array<long, 2> mlo{}, mhi{};
  for (int dd = 0; dd < n; ++dd) {
    mlo[(std::size_t)dd] = (long)std::ceil(blo(dd) * r - 1e-12);
    mhi[(std::size_t)dd] = (long)std::floor(bhi(dd) * r + 1e-12);
  }
  std::vector<std::array<int, 3>> xi_units;
  for (long m0 = mlo[0]; m0 <= mhi[0]; ++m0) {
    if (n == 1) {
      Vec p(1);
      p(0) = m0 / r;
      if (S.D.contains(p)) {
        d.xi_points.push_back(p);
        xi_units.push_back({(int)m0, 0, 0});
      }
    } else {
      for (long m1 = mlo[1]; m1 <= mhi[1]; ++m1) {
        Vec p(2);
        p(0) = m0 / r;
        p(1) = m1 / r;
        if (S.D.contains(p)) {
          d.xi_points.push_back(p);
          xi_units.push_back({(int)m0, (int)m1, 0});
        }
      }
    }
  }
  const std::size_t ncell = d.xi_points.size();
  require(ncell > 0, ErrorKind::validation,
          "decompose: frequency lattice does not meet the base domain");

  // Translation quadrature: tensor Gauss-Legendre over the shift ball of
  // radius 0.5 r^{-1} with a smooth radial weight, normalized to sum 1.
  d.omega_radius = 0.5 / r;
  {
    std::vector<double> gx, gw;
    gauss_legendre(n_omega, gx, gw);
    std::size_t count = 1;
    for (int dd = 0; dd < n; ++dd) count *= (std::size_t)n_omega;
    double wsum = 0.0;
    for (std::size_t q = 0; q < count; ++q) {
      std::size_t idx[8];
      unflatten(q, n, (std::size_t)n_omega, idx);
      Vec node(n);
      double wq = 1.0;
      for (int dd = 0; dd < n; ++dd) {
        node(dd) = d.omega_radius * gx[idx[dd]];
        wq *= gw[idx[dd]];
      }
      wq *= smooth_ball_weight(node.norm() * 2.0 * r);
      if (wq <= 0) continue;
      d.omega_nodes.push_back(node);
      d.omega_weights.push_back(wq);
      wsum += wq;
    }
    require(wsum > 0, ErrorKind::numeric,
            "decompose: translation quadrature has zero total weight");
    for (auto& wq : d.omega_weights) wq /= wsum;
  }

  // Averaged sharp projections per cell: for each support node and shift,
  // the node goes to the cell whose lattice point is nearest to node-shift.
  auto nearest_cell = [&](const Vec& p) -> std::size_t {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t ci = 0; ci < ncell; ++ci) {
      const double d2 = (d.xi_points[ci] - p).squaredNorm();
      if (d2 < bd) {
        bd = d2;
        best = ci;
      }
    }
    return best;
  };
  const std::size_t NG = f.grid.size();
  std::vector<std::unordered_map<std::size_t, cplx>> acc(ncell);
  for (std::size_t k = 0; k < NG; ++k) {
    if (!f.mask[k] || f.amplitudes[k] == cplx(0, 0)) continue;
    const Vec node = f.grid.node(k);
    for (std::size_t j = 0; j < d.omega_nodes.size(); ++j) {
      const std::size_t ci = nearest_cell(node - d.omega_nodes[j]);
      acc[ci][k] += d.omega_weights[j] * f.amplitudes[k];
    }
  }
  d.projected.resize(ncell);
  for (std::size_t ci = 0; ci < ncell; ++ci) {
    auto& sp = d.projected[ci];
    sp.idx.reserve(acc[ci].size());
    for (const auto& kv : acc[ci]) sp.idx.push_back(kv.first);
    std::sort(sp.idx.begin(), sp.idx.end());
    sp.val.reserve(sp.idx.size());
    for (auto k : sp.idx) sp.val.push_back(acc[ci].at(k));
  }

  // Raw spatial fields per cell (fold + forward transform; the physical
  // field is cell_volume * twiddle * raw, so |raw| carries all masses).
  const std::size_t res = f.grid.res;
  d.cell_fields.assign(ncell, {});
  for_each_index(ncell, exec, [&](std::size_t ci) {
    std::vector<cplx> buf(NG, cplx(0, 0));
    const auto& sp = d.projected[ci];
    std::size_t idx[8];
    for (std::size_t t = 0; t < sp.idx.size(); ++t) {
      unflatten(sp.idx[t], n, res, idx);
      buf[sp.idx[t]] = sp.val[t] * (double)index_parity(idx, n);
    }
    fft_nd(buf, n, res, +1, Exec::serial);
    d.cell_fields[ci] = std::move(buf);
  });

  // Spatial lattice (c^{-2} r) Z^n over the window plus profile tails, and
  // exact per-tube masses via separable contractions of the field energies.
  std::array<long, 2> K{};
  for (int dd = 0; dd < n; ++dd)
    K[(std::size_t)dd] =
        (long)std::floor(0.5 * f.grid.window(dd) / d.s + kLatticeTail);
  const long nx0 = 2 * K[0] + 1;
  const long nx1 = n == 2 ? 2 * K[1] + 1 : 1;
  if (n == 1) {
    for (long t0 = -K[0]; t0 <= K[0]; ++t0) {
      Vec p(1);
      p(0) = d.s * (double)t0;
      d.x_points.push_back(p);
    }
  } else {
    for (long t0 = -K[0]; t0 <= K[0]; ++t0)
      for (long t1 = -K[1]; t1 <= K[1]; ++t1) {
        Vec p(2);
        p(0) = d.s * (double)t0;
        p(1) = d.s * (double)t1;
        d.x_points.push_back(p);
      }
  }

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::vector<RowMat> P2(n);
  for (int dd = 0; dd < n; ++dd) {
    const long nxd = 2 * K[(std::size_t)dd] + 1;
    P2[dd].resize(nxd, (long)res);
    for (long t = 0; t < nxd; ++t)
      for (long j = 0; j < (long)res; ++j) {
        const double xj = ((double)j - (double)(res / 2)) * f.grid.dx(dd);
        const double v =
            d.bump.value1d(xj / d.s - (double)(t - K[(std::size_t)dd]));
        P2[dd](t, j) = v * v;
      }
  }
  const double mass_scale = f.grid.cell_volume() / (double)NG;
  std::vector<RowMat> cell_mass(ncell);
  for_each_index(ncell, exec, [&](std::size_t ci) {
    if (n == 1) {
      Eigen::VectorXd u2((long)res);
      for (long j = 0; j < (long)res; ++j)
        u2(j) = std::norm(d.cell_fields[ci][(std::size_t)j]);
      cell_mass[ci] = (P2[0] * u2 * mass_scale).eval();
    } else {
      RowMat u2((long)res, (long)res);
      for (long j0 = 0; j0 < (long)res; ++j0)
        for (long j1 = 0; j1 < (long)res; ++j1)
          u2(j0, j1) =
              std::norm(d.cell_fields[ci][(std::size_t)(j0 * (long)res + j1)]);
      cell_mass[ci] = (P2[0] * u2 * P2[1].transpose() * mass_scale).eval();
    }
  });

  const double floor_mass = kTubeMassFloor * d.source_mass;
  for (std::size_t ci = 0; ci < ncell; ++ci) {
    const Vec xi = d.xi_points[ci];
    const Vec vel = -S.grad(xi);
    for (long t0 = 0; t0 < nx0; ++t0)
      for (long t1 = 0; t1 < nx1; ++t1) {
        const double m = n == 1 ? cell_mass[ci](t0, 0) : cell_mass[ci](t0, t1);
        if (m < floor_mass) continue;
        Tube T;
        T.x_units = {(int)(t0 - K[0]), n == 2 ? (int)(t1 - K[1]) : 0, 0};
        T.xi_units = xi_units[ci];
        T.x = Vec(n);
        for (int dd = 0; dd < n; ++dd)
          T.x(dd) = d.s * (double)T.x_units[(std::size_t)dd];
        T.xi = xi;
        T.velocity = vel;
        T.width = d.s;
        T.mass = m;
        T.cell = (int)ci;
        d.tubes.push_back(std::move(T));
      }
  }

  d.params = json{{"R", d.R},
                  {"r", d.r},
                  {"c", d.c},
                  {"N", d.N},
                  {"n_omega", d.n_omega},
                  {"tube_width", d.s},
                  {"omega_radius", d.omega_radius},
                  {"omega_radius_constant", 0.5},
                  {"omega_node_count", d.omega_nodes.size()},
                  {"cells", ncell},
                  {"x_points", d.x_points.size()},
                  {"tubes", d.tubes.size()},
                  {"tube_mass_floor", kTubeMassFloor},
                  {"amplitude_chop", kPacketChop},
                  {"tie_rule", "lexicographic"},
                  {"bump", d.bump.to_json()}};
  return d;
}

// ---------------------------------------------------------------------------
// Packet synthesis

namespace {

// Per-axis profile samples centered at x_T, from the true (non-periodized)
// profile.
std::vector<std::vector<double>> profile_axes(const PacketDecomposition& d,
                                              const Vec& x_T) {
  const auto& g = d.source->grid;
  std::vector<std::vector<double>> px((std::size_t)d.n,
                                      std::vector<double>(g.res));
  for (int dd = 0; dd < d.n; ++dd)
    for (std::size_t j = 0; j < g.res; ++j) {
      const double xj = ((double)j - (double)(g.res / 2)) * g.dx(dd);
      px[(std::size_t)dd][j] = d.bump.value1d((xj - x_T(dd)) / d.s);
    }
  return px;
}

// Raw cell field multiplied by the profile centered at x_T (spatial samples).
// Returns false when the profile vanishes on the whole window.
bool windowed_product(const PacketDecomposition& d, int cell, const Vec& x_T,
                      std::vector<cplx>& buf) {
  const auto& g = d.source->grid;
  const auto px = profile_axes(d, x_T);
  double pmax = 1.0;
  for (int dd = 0; dd < d.n; ++dd) {
    double m = 0.0;
    for (double v : px[(std::size_t)dd]) m = std::max(m, v);
    pmax *= m;
  }
  if (pmax <= 0.0) return false;
  buf = d.cell_fields[(std::size_t)cell];
  std::size_t idx[8];
  for (std::size_t j = 0; j < buf.size(); ++j) {
    unflatten(j, d.n, g.res, idx);
    double e = 1.0;
    for (int dd = 0; dd < d.n; ++dd) e *= px[(std::size_t)dd][idx[dd]];
    buf[j] *= e;
  }
  return true;
}

// Phase speed phi(xi) at every grid node.
std::vector<double> phase_table(const WaveState& f) {
  std::vector<double> phi(f.grid.size());
  for (std::size_t k = 0; k < phi.size(); ++k)
    phi[k] = f.surface->phi(f.grid.node(k));
  return phi;
}

}  // namespace

WaveState packet(const PacketDecomposition& d, const Tube& T) {
  require(T.cell >= 0 && T.cell < (int)d.cell_fields.size(),
          ErrorKind::validation, "packet: tube cell out of range");
  std::vector<cplx> buf;
  if (!windowed_product(d, T.cell, T.x, buf))
    buf.assign(d.source->grid.size(), cplx(0, 0));
  return state_from_raw(d, std::move(buf));
}

WaveState state_from_raw(const PacketDecomposition& d, std::vector<cplx> buf) {
  const WaveState& f = *d.source;
  const std::size_t res = f.grid.res;
  const std::size_t NG = f.grid.size();
  require(buf.size() == NG, ErrorKind::validation,
          "state synthesis: raw sample count must match the grid");

  fft_nd(buf, d.n, res, -1, Exec::serial);
  const double inv = 1.0 / (double)NG;
  double vmax = 0.0;
  {
    std::size_t idx[8];
    for (std::size_t k = 0; k < NG; ++k) {
      unflatten(k, d.n, res, idx);
      buf[k] *= inv * (double)index_parity(idx, d.n);
      vmax = std::max(vmax, std::abs(buf[k]));
    }
  }

  WaveState w;
  w.grid = f.grid;
  w.surface = f.surface;
  w.time = f.time;
  w.phase = f.phase;
  w.mask = f.mask;
  w.amplitudes.assign(NG, cplx(0, 0));
  const double chop = kPacketChop * vmax;
  double kept2 = 0.0, outside2 = 0.0;
  for (std::size_t k = 0; k < NG; ++k) {
    const double m = std::abs(buf[k]);
    if (m <= chop) continue;
    if (!f.mask[k]) {
      // Window-wrap leakage of the sampled profile is projected away; a
      // large fraction would signal a genuine spectral escape.
      outside2 += m * m;
      continue;
    }
    w.amplitudes[k] = buf[k];
    kept2 += m * m;
  }
  require(outside2 <= 1e-2 * std::max(kept2, 1e-300), ErrorKind::numeric,
          "packet: spectral support escaped the enlarged domain");

  Vec vlo = Vec::Constant(d.n, std::numeric_limits<double>::infinity());
  Vec vhi = Vec::Constant(d.n, -std::numeric_limits<double>::infinity());
  bool any = false;
  for (std::size_t k = 0; k < NG; ++k) {
    if (w.amplitudes[k] == cplx(0, 0)) continue;
    const Vec g = f.surface->grad(f.grid.node(k));
    for (int dd = 0; dd < d.n; ++dd) {
      vlo(dd) = std::min(vlo(dd), g(dd));
      vhi(dd) = std::max(vhi(dd), g(dd));
    }
    any = true;
  }
  if (!any) {
    vlo = f.vel_lo;
    vhi = f.vel_hi;
  }
  w.vel_lo = vlo;
  w.vel_hi = vhi;
  return w;
}

// ---------------------------------------------------------------------------
// Partition field and reconstruction

static std::vector<double> partition_axis(const PacketDecomposition& d,
                                          int axis) {
  const auto& g = d.source->grid;
  std::vector<double> S(g.res, 0.0);
  for (std::size_t j = 0; j < g.res; ++j) {
    const double y = ((double)j - (double)(g.res / 2)) * g.dx(axis) / d.s;
    const long tlo = (long)std::floor(y - d.bump.ymax);
    const long thi = (long)std::ceil(y + d.bump.ymax);
    double acc = 0.0;
    for (long t = tlo; t <= thi; ++t) acc += d.bump.value1d(y - (double)t);
    S[j] = acc;
  }
  return S;
}

double partition_unity_deviation(const PacketDecomposition& d) {
  const auto& g = d.source->grid;
  std::vector<std::vector<double>> S((std::size_t)d.n);
  for (int dd = 0; dd < d.n; ++dd) S[(std::size_t)dd] = partition_axis(d, dd);
  double worst = 0.0;
  std::size_t idx[8];
  for (std::size_t j = 0; j < g.size(); ++j) {
    unflatten(j, d.n, g.res, idx);
    double p = 1.0;
    for (int dd = 0; dd < d.n; ++dd) p *= S[(std::size_t)dd][idx[dd]];
    worst = std::max(worst, std::abs(p - 1.0));
  }
  return worst;
}

double reconstruction_residual(const PacketDecomposition& d, Exec exec) {
  const WaveState& f = *d.source;
  const std::size_t NG = f.grid.size();
  const std::size_t res = f.grid.res;
  std::vector<std::vector<double>> S((std::size_t)d.n);
  for (int dd = 0; dd < d.n; ++dd) S[(std::size_t)dd] = partition_axis(d, dd);

  // Sum of all packets over the full translation lattice: the frequency
  // cells partition the projected spectrum, so the packet sum equals the
  // partition field times the summed cell fields.
  std::vector<cplx> usum(NG, cplx(0, 0));
  for (const auto& cf : d.cell_fields)
    for (std::size_t j = 0; j < NG; ++j) usum[j] += cf[j];
  {
    std::size_t idx[8];
    for (std::size_t j = 0; j < NG; ++j) {
      unflatten(j, d.n, res, idx);
      double p = 1.0;
      for (int dd = 0; dd < d.n; ++dd) p *= S[(std::size_t)dd][idx[dd]];
      usum[j] *= p;
    }
  }
  fft_nd(usum, d.n, res, -1, exec);
  const double inv = 1.0 / (double)NG;
  double num = 0.0, den = 0.0;
  std::size_t idx[8];
  for (std::size_t k = 0; k < NG; ++k) {
    unflatten(k, d.n, res, idx);
    const cplx rec = usum[k] * inv * (double)index_parity(idx, d.n);
    num += std::norm(rec - f.amplitudes[k]);
    den += std::norm(f.amplitudes[k]);
  }
  require(den > 0, ErrorKind::numeric, "reconstruction: zero source");
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------
// Margin and spectral support

namespace {

// The continuum spectrum of a packet is the projected cell support widened
// by the profile bandwidth; both the margin shift and the spectral diameter
// are evaluated on that support (the windowed DFT of the sampled profile is
// a representation artifact and is not used here).
struct CellSupport {
  double min_margin = std::numeric_limits<double>::infinity();
  Vec lo, hi;
  bool any = false;
};

std::vector<CellSupport> cell_supports(const PacketDecomposition& d) {
  const auto& f = *d.source;
  const Domain& dom = f.surface->D_tilde;
  std::vector<CellSupport> out(d.projected.size());
  for (std::size_t ci = 0; ci < d.projected.size(); ++ci) {
    auto& cs = out[ci];
    cs.lo = Vec::Constant(d.n, std::numeric_limits<double>::infinity());
    cs.hi = Vec::Constant(d.n, -std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < d.projected[ci].idx.size(); ++t) {
      if (d.projected[ci].val[t] == cplx(0, 0)) continue;
      const Vec node = f.grid.node(d.projected[ci].idx[t]);
      cs.min_margin = std::min(cs.min_margin, dom.dist_to_complement(node));
      for (int dd = 0; dd < d.n; ++dd) {
        cs.lo(dd) = std::min(cs.lo(dd), node(dd));
        cs.hi(dd) = std::max(cs.hi(dd), node(dd));
      }
      cs.any = true;
    }
  }
  return out;
}

}  // namespace

double margin_shift(const PacketDecomposition& d) {
  const double spill = d.bump.spectral_radius() / d.s;
  double worst = 0.0;
  for (const auto& cs : cell_supports(d)) {
    if (!cs.any) continue;
    const double packet_margin = cs.min_margin - spill;
    worst = std::max(worst, d.source_margin - packet_margin);
  }
  return std::max(0.0, worst);
}

double packet_spectral_diameter(const PacketDecomposition& d) {
  const auto& g = d.source->grid;
  const double axis_spill =
      d.bump.spectral_radius() / (std::sqrt((double)d.n) * d.s);
  double worst = 0.0;
  for (const auto& cs : cell_supports(d)) {
    if (!cs.any) continue;
    Vec ext = cs.hi - cs.lo;
    for (int dd = 0; dd < d.n; ++dd) ext(dd) += 2.0 * axis_spill + g.dxi(dd);
    worst = std::max(worst, ext.norm());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Far-tube decay

FarTubeReport far_tube_decay(const PacketDecomposition& d, const CubeRegion& Q,
                             double base_mult, int n_bins, Exec exec) {
  require(n_bins >= 3 && n_bins <= 10, ErrorKind::validation,
          "far_tube_decay: need between 3 and 10 distance bins");
  require(base_mult >= 2.0, ErrorKind::validation,
          "far_tube_decay: distance base must be at least 2 cube sides");
  require((int)Q.center.size() == d.n + 1, ErrorKind::validation,
          "far_tube_decay: cube dimension mismatch");
  const WaveState& f = *d.source;
  const std::size_t res = f.grid.res;
  const std::size_t NG = f.grid.size();
  const double Reff = Q.effective_side();
  const Vec xc = Q.center.head(d.n);
  const double tc = Q.center(d.n);
  const double hb = 0.5 * Reff;
  const double cv = f.grid.cell_volume();

  // Grid nodes inside the spatial face of the cube.
  std::vector<std::size_t> in_q;
  {
    std::size_t idx[8];
    for (std::size_t j = 0; j < NG; ++j) {
      unflatten(j, d.n, res, idx);
      bool inside = true;
      for (int dd = 0; dd < d.n; ++dd) {
        const double xj = ((double)idx[dd] - (double)(res / 2)) * f.grid.dx(dd);
        if (std::abs(xj - xc(dd)) > hb) {
          inside = false;
          break;
        }
      }
      if (inside) in_q.push_back(j);
    }
  }
  require(!in_q.empty(), ErrorKind::validation,
          "far_tube_decay: cube has no grid nodes");
  const std::vector<double> phi = phase_table(f);

  // Dominant frequency cells by projected spectral mass.
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t ci = 0; ci < d.xi_points.size(); ++ci) {
    double m = 0.0;
    for (const auto& v : d.projected[ci].val) m += std::norm(v);
    order.push_back({m, ci});
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t top_cells = std::min<std::size_t>(order.size(), 6);

  struct BinAcc {
    double value = 0.0;
    double dist = 0.0;
    int count = 0;
  };
  std::vector<BinAcc> bins((std::size_t)n_bins);
  double max_ratio = 0.0;

  const int n_angles = d.n == 1 ? 2 : 12;
  const int n_tdist = 33;
  const int n_times = 9;
  std::set<std::array<long, 2>> seen;

  std::vector<cplx> buf, evo(NG);
  for (int bi = 0; bi < n_bins; ++bi) {
    const double target = base_mult * std::pow(2.0, bi) * Reff * 1.45;
    for (int ai = 0; ai < n_angles; ++ai) {
      Vec dir(d.n);
      if (d.n == 1)
        dir(0) = ai == 0 ? 1.0 : -1.0;
      else {
        const double th = 2.0 * M_PI * (ai + 0.37) / n_angles;
        dir(0) = std::cos(th);
        dir(1) = std::sin(th);
      }
      std::array<long, 2> xu{};
      for (int dd = 0; dd < d.n; ++dd)
        xu[(std::size_t)dd] =
            (long)std::llround((xc(dd) + target * dir(dd)) / d.s);
      if (!seen.insert(xu).second) continue;
      Vec x_T(d.n);
      for (int dd = 0; dd < d.n; ++dd)
        x_T(dd) = d.s * (double)xu[(std::size_t)dd];

      for (std::size_t oi = 0; oi < top_cells; ++oi) {
        const std::size_t ci = order[oi].second;
        const Vec vel = -f.surface->grad(d.xi_points[ci]);
        // Distance from the moving tube center to the spatial face over the
        // cube's time span.
        double dist = std::numeric_limits<double>::infinity();
        for (int ti = 0; ti < n_tdist; ++ti) {
          const double t = tc - hb + Reff * (double)ti / (n_tdist - 1);
          double acc2 = 0.0;
          for (int dd = 0; dd < d.n; ++dd) {
            const double pdd = x_T(dd) + vel(dd) * t;
            const double e = std::max(0.0, std::abs(pdd - xc(dd)) - hb);
            acc2 += e * e;
          }
          dist = std::min(dist, std::sqrt(acc2));
        }
        if (dist < base_mult * Reff) continue;
        const int bin = (int)std::floor(std::log2(dist / (base_mult * Reff)));
        if (bin < 0 || bin >= n_bins) continue;

        if (!windowed_product(d, (int)ci, x_T, buf)) continue;
        fft_nd(buf, d.n, res, -1, Exec::serial);
        const double inv = 1.0 / (double)NG;
        for (auto& v : buf) v *= inv;

        double linf = 0.0;
        for (int tv = 0; tv < n_times; ++tv) {
          const double tp = tc + ((tv + 0.5) / n_times - 0.5) * Reff;
          for (std::size_t k = 0; k < NG; ++k)
            evo[k] = buf[k] * std::polar(1.0, (tp - f.time) * phi[k]);
          fft_nd(evo, d.n, res, +1, exec);
          for (auto j : in_q) linf = std::max(linf, std::abs(evo[j]));
        }
        linf *= cv;
        if (linf <= 0.0) continue;
        auto& B = bins[(std::size_t)bin];
        if (linf > B.value) {
          B.value = linf;
          B.dist = dist;
        }
        B.count += 1;
        max_ratio = std::max(
            max_ratio, linf * std::pow(dist, (double)d.N) *
                           std::pow(d.c, kFarC0) / std::sqrt(d.source_mass));
      }
    }
  }

  std::vector<double> xs, ys;
  json jb = json::array();
  for (const auto& B : bins) {
    jb.push_back(json{{"distance", B.dist},
                      {"max_field", B.value},
                      {"tubes", B.count}});
    if (B.value > 0) {
      xs.push_back(B.dist);
      ys.push_back(B.value);
    }
  }
  require(xs.size() >= 3, ErrorKind::numeric,
          "far_tube_decay: no far tubes in this configuration; the decay "
          "fit is inconclusive");
  const LineFit fit = fit_loglog(xs, ys);
  FarTubeReport rep;
  rep.max_ratio = max_ratio;
  rep.exponent = -fit.slope;
  rep.bins_used = (int)xs.size();
  rep.details = json{{"bins", jb},
                     {"calibration_exponent", kFarC0},
                     {"base_mult", base_mult},
                     {"angles", n_angles},
                     {"cells_probed", top_cells}};
  return rep;
}

// ---------------------------------------------------------------------------
// Weighted quadratic estimate

QestReport qest_check(const PacketDecomposition& d, std::size_t tube_budget,
                      Exec exec) {
  const WaveState& f = *d.source;
  const std::size_t res = f.grid.res;
  const std::size_t NG = f.grid.size();
  const double Reff = d.Q.effective_side();
  const Vec xc = d.Q.center.head(d.n);
  const double tc = d.Q.center(d.n);
  const long nq = std::max<long>(2, (long)std::llround(Reff / d.r));
  const double qs = Reff / (double)nq;

  // Spatial nodes inside the cube, with their fine-cell index.
  std::vector<std::pair<std::size_t, long>> nodes;  // (flat, spatial cell)
  {
    std::size_t idx[8];
    for (std::size_t j = 0; j < NG; ++j) {
      unflatten(j, d.n, res, idx);
      long qflat = 0;
      bool inside = true;
      for (int dd = 0; dd < d.n; ++dd) {
        const double xj = ((double)idx[dd] - (double)(res / 2)) * f.grid.dx(dd);
        const long qi = (long)std::floor((xj - (xc(dd) - 0.5 * Reff)) / qs);
        if (qi < 0 || qi >= nq) {
          inside = false;
          break;
        }
        qflat = qflat * nq + qi;
      }
      if (inside) nodes.push_back({j, qflat});
    }
  }
  long nqsp = 1;
  for (int dd = 0; dd < d.n; ++dd) nqsp *= nq;
  const std::vector<double> phi = phase_table(f);

  std::vector<std::size_t> order(d.tubes.size());
  std::iota(order.begin(), order.end(), (std::size_t)0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (d.tubes[a].mass != d.tubes[b].mass)
      return d.tubes[a].mass > d.tubes[b].mass;
    return a < b;
  });
  double total_mass = 0.0;
  for (const auto& T : d.tubes) total_mass += T.mass;

  const double mass_scale = f.grid.cell_volume() / (double)NG;
  double total = 0.0, covered = 0.0;
  std::size_t processed = 0;
  std::vector<double> qmass((std::size_t)nqsp);
  std::vector<cplx> buf, evo(NG);
  for (auto tid : order) {
    if (processed >= tube_budget) break;
    if (total_mass > 0 && covered >= 0.999 * total_mass) break;
    const Tube& T = d.tubes[tid];
    if (!windowed_product(d, T.cell, T.x, buf)) continue;
    fft_nd(buf, d.n, res, -1, Exec::serial);
    const double inv = 1.0 / (double)NG;
    for (auto& v : buf) v *= inv;

    double sup = 0.0;
    for (long l = 0; l < nq; ++l) {
      const double tl = tc - 0.5 * Reff + (l + 0.5) * qs;
      for (std::size_t k = 0; k < NG; ++k)
        evo[k] = buf[k] * std::polar(1.0, (tl - f.time) * phi[k]);
      fft_nd(evo, d.n, res, +1, exec);
      std::fill(qmass.begin(), qmass.end(), 0.0);
      for (const auto& nd : nodes)
        qmass[(std::size_t)nd.second] += std::norm(evo[nd.first]);
      for (long qsp = 0; qsp < nqsp; ++qsp) {
        if (qmass[(std::size_t)qsp] == 0.0) continue;
        double dist2 = 0.0;
        long rem = qsp;
        for (int dd = d.n - 1; dd >= 0; --dd) {
          const long qi = rem % nq;
          rem /= nq;
          const double cq = xc(dd) - 0.5 * Reff + (qi + 0.5) * qs;
          const double delta = wrap_periodic(
              cq - (T.x(dd) + T.velocity(dd) * tl), f.grid.window(dd));
          dist2 += delta * delta;
        }
        const double wgt = std::pow(1.0 + std::sqrt(dist2) / d.s, (double)d.N);
        const double mq = qmass[(std::size_t)qsp] * mass_scale * qs;
        sup = std::max(sup, wgt * mq);
      }
    }
    total += sup;
    covered += T.mass;
    ++processed;
  }

  QestReport rep;
  rep.ratio = total / (d.r * d.source_mass);
  rep.coverage = total_mass > 0 ? covered / total_mass : 1.0;
  rep.c = d.c;
  rep.details = json{{"tubes_processed", processed},
                     {"fine_cells_per_axis", nq},
                     {"tube_budget", tube_budget}};
  return rep;
}

// ---------------------------------------------------------------------------
// Mass redistribution

double mass_redistribution_check(const PacketDecomposition& d, const Mat& m,
                                 Exec exec) {
  const long rows = m.rows();
  const long cols = m.cols();
  require(rows >= 1 && cols == (long)d.tubes.size(), ErrorKind::validation,
          "mass_redistribution: input error: coefficient matrix must have "
          "one column per tube");
  for (long j = 0; j < cols; ++j) {
    double sum = 0.0;
    for (long i = 0; i < rows; ++i) {
      require(m(i, j) >= -1e-15, ErrorKind::validation,
              "mass_redistribution: input error: negative coefficient");
      sum += m(i, j);
    }
    require(std::abs(sum - 1.0) <= 1e-12, ErrorKind::validation,
            "mass_redistribution: input error: each column must sum to 1");
  }

  // Identical rows produce identical blends; group them.
  std::map<std::string, std::pair<long, long>> groups;  // key -> (row, count)
  for (long i = 0; i < rows; ++i) {
    const Eigen::RowVectorXd rv = m.row(i);
    std::string key((const char*)rv.data(),
                    sizeof(double) * (std::size_t)cols);
    auto it = groups.find(key);
    if (it == groups.end())
      groups[key] = {i, 1};
    else
      it->second.second += 1;
  }

  const WaveState& f = *d.source;
  const std::size_t res = f.grid.res;
  const std::size_t NG = f.grid.size();
  const double mass_scale = f.grid.cell_volume() / (double)NG;

  std::vector<std::pair<long, long>> glist;
  for (const auto& kv : groups) glist.push_back(kv.second);
  std::sort(glist.begin(), glist.end());

  std::vector<double> group_mass(glist.size(), 0.0);
  for_each_index(glist.size(), exec, [&](std::size_t gi) {
    const long row = glist[gi].first;
    std::vector<cplx> acc(NG, cplx(0, 0));
    std::vector<double> px0(res), px1(res);
    for (std::size_t t = 0; t < d.tubes.size(); ++t) {
      const double coef = m(row, (long)t);
      if (coef <= 0.0) continue;
      const Tube& T = d.tubes[t];
      for (int dd = 0; dd < d.n; ++dd) {
        auto& p = dd == 0 ? px0 : px1;
        for (std::size_t j = 0; j < res; ++j) {
          const double xj = ((double)j - (double)(res / 2)) * f.grid.dx(dd);
          p[j] = d.bump.value1d((xj - T.x(dd)) / d.s);
        }
      }
      const auto& u = d.cell_fields[(std::size_t)T.cell];
      if (d.n == 1) {
        for (std::size_t j = 0; j < res; ++j) acc[j] += coef * px0[j] * u[j];
      } else {
        for (std::size_t j0 = 0; j0 < res; ++j0) {
          const double e0 = coef * px0[j0];
          if (e0 == 0.0) continue;
          const std::size_t base = j0 * res;
          for (std::size_t j1 = 0; j1 < res; ++j1)
            acc[base + j1] += e0 * px1[j1] * u[base + j1];
        }
      }
    }
    double mg = 0.0;
    for (std::size_t j = 0; j < NG; ++j) mg += std::norm(acc[j]);
    group_mass[gi] = mg * mass_scale;
  });

  double total = 0.0;
  for (std::size_t gi = 0; gi < glist.size(); ++gi)
    total += (double)glist[gi].second * group_mass[gi];
  return std::sqrt(total / d.source_mass) - 1.0;
}

// ---------------------------------------------------------------------------
// Commutator growth

CommutatorReport commutator_bound(const PacketDecomposition& d,
                                  const std::vector<double>& times,
                                  int probe_tubes, Exec exec) {
  require(!times.empty(), ErrorKind::validation,
          "commutator_bound: need at least one time");
  require(probe_tubes >= 1, ErrorKind::validation,
          "commutator_bound: need at least one probe tube");
  const WaveState& f = *d.source;
  const std::size_t res = f.grid.res;
  const std::size_t NG = f.grid.size();

  std::vector<std::size_t> order(d.tubes.size());
  std::iota(order.begin(), order.end(), (std::size_t)0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (d.tubes[a].mass != d.tubes[b].mass)
      return d.tubes[a].mass > d.tubes[b].mass;
    return a < b;
  });
  if (order.size() > (std::size_t)probe_tubes)
    order.resize((std::size_t)probe_tubes);
  require(!order.empty(), ErrorKind::numeric,
          "commutator_bound: empty tube inventory");

  const std::vector<double> phi = phase_table(f);
  const double xvol = f.grid.x_cell_volume();
  const double cv = f.grid.cell_volume();
  const double den = d.s * std::sqrt(std::pow(2.0 * M_PI, d.n) * d.source_mass);

  CommutatorReport rep;
  rep.times = times;
  rep.ratios.assign(times.size(), 0.0);
  std::vector<cplx> buf, evo(NG);
  std::size_t idx[8];
  for (auto tid : order) {
    const Tube& T = d.tubes[tid];
    if (!windowed_product(d, T.cell, T.x, buf)) continue;
    fft_nd(buf, d.n, res, -1, Exec::serial);
    const double inv = 1.0 / (double)NG;
    for (auto& v : buf) v *= inv;
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      const double t = times[ti];
      for (std::size_t k = 0; k < NG; ++k)
        evo[k] = buf[k] * std::polar(1.0, (t - f.time) * phi[k]);
      fft_nd(evo, d.n, res, +1, exec);
      double num2 = 0.0;
      for (std::size_t j = 0; j < NG; ++j) {
        unflatten(j, d.n, res, idx);
        double w2 = 0.0;
        for (int dd = 0; dd < d.n; ++dd) {
          const double xj =
              ((double)idx[dd] - (double)(res / 2)) * f.grid.dx(dd);
          const double delta = wrap_periodic(
              xj - (T.x(dd) + T.velocity(dd) * t), f.grid.window(dd));
          w2 += delta * delta;
        }
        num2 += std::norm(evo[j]) * w2;
      }
      const double num = cv * std::sqrt(num2 * xvol);
      rep.ratios[ti] = std::max(rep.ratios[ti], num / den);
    }
  }
  rep.K = *std::max_element(rep.ratios.begin(), rep.ratios.end());
  return rep;
}

// ---------------------------------------------------------------------------
// Inventory export

void write_packet_inventory(const PacketDecomposition& d,
                            const std::string& csv_path,
                            const std::string& sidecar_path) {
  // Spectral diameter per frequency cell on the continuum support
  // (translate-independent).
  const auto supports = cell_supports(d);
  const double axis_spill =
      d.bump.spectral_radius() / (std::sqrt((double)d.n) * d.s);
  std::vector<double> cell_diam(supports.size(), 0.0);
  for (std::size_t ci = 0; ci < supports.size(); ++ci) {
    if (!supports[ci].any) continue;
    Vec ext = supports[ci].hi - supports[ci].lo;
    for (int dd = 0; dd < d.n; ++dd)
      ext(dd) += 2.0 * axis_spill + d.source->grid.dxi(dd);
    cell_diam[ci] = ext.norm();
  }

  std::ofstream out(csv_path);
  require(out.good(), ErrorKind::io,
          "packet inventory: cannot open CSV for writing");
  for (int dd = 0; dd < d.n; ++dd) out << "x" << dd << ",";
  for (int dd = 0; dd < d.n; ++dd) out << "xi" << dd << ",";
  out << "mass,spectral_diameter\n";
  char num[64];
  for (const auto& T : d.tubes) {
    for (int dd = 0; dd < d.n; ++dd) {
      std::snprintf(num, sizeof(num), "%.17g", T.x(dd));
      out << num << ",";
    }
    for (int dd = 0; dd < d.n; ++dd) {
      std::snprintf(num, sizeof(num), "%.17g", T.xi(dd));
      out << num << ",";
    }
    std::snprintf(num, sizeof(num), "%.17g", T.mass);
    out << num << ",";
    std::snprintf(num, sizeof(num), "%.17g", cell_diam[(std::size_t)T.cell]);
    out << num << "\n";
  }
  require(out.good(), ErrorKind::io, "packet inventory: CSV write failed");
  out.close();

  std::ofstream sc(sidecar_path);
  require(sc.good(), ErrorKind::io,
          "packet inventory: cannot open sidecar for writing");
  sc << d.params.dump(2) << "\n";
  require(sc.good(), ErrorKind::io, "packet inventory: sidecar write failed");
}

}  // namespace bilin
