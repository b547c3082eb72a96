#include "bilin/tables.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "bilin/errors.hpp"
#include "bilin/fft.hpp"

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

// u^e for integer e >= 0 by binary exponentiation.
double ipow(double u, int e) {
  double acc = 1.0, base = u;
  while (e > 0) {
    if (e & 1) acc *= base;
    base *= base;
    e >>= 1;
  }
  return acc;
}

std::size_t count_pow(std::size_t base, int e) {
  std::size_t t = 1;
  for (int i = 0; i < e; ++i) t *= base;
  return t;
}

// Degenerate-column fallback threshold, relative to M(psi).
constexpr double kDegenerateThreshold = 1e-14;
// Per-column coefficient floor; kept entries are renormalized to sum 1.
constexpr double kCoefficientFloor = 1e-6;
// Quadrature nodes with less energy than this (relative to M(psi)) are
// skipped in the coefficient sums.
constexpr double kNodeFloor = 1e-22;

// ---------------------------------------------------------------------------
// Shared assembly machinery: a component field is
//   stream / #children + sum_cells u_cell(x) * W_{cell,q}(x),
// with W a coefficient-weighted sum of window translates, separable per
// axis. A View bundles the (possibly cropped) spatial grid the assembly
// runs on.

struct View {
  std::size_t res = 0;
  std::array<double, 3> dx{};  // spatial spacing per axis
  const std::vector<std::vector<cplx>>* cells = nullptr;
  const std::vector<cplx>* stream = nullptr;
  // Cache of window profile lines keyed by (axis, lattice unit).
  mutable std::map<std::pair<int, int>, std::vector<double>> lines;
};

const std::vector<double>& profile_line(const PacketDecomposition& d,
                                        const View& v, int axis, int unit) {
  auto key = std::make_pair(axis, unit);
  auto it = v.lines.find(key);
  if (it != v.lines.end()) return it->second;
  std::vector<double> w(v.res);
  for (std::size_t j = 0; j < v.res; ++j) {
    const double xj =
        ((double)j - (double)(v.res / 2)) * v.dx[(std::size_t)axis];
    w[j] = d.bump.value1d(xj / d.s - (double)unit);
  }
  return v.lines.emplace(key, std::move(w)).first->second;
}

// out += sign * u_cell * sum_tubes coef * eta_tube on the view grid, using
// the per-axis separable structure of the window translates.
void accumulate_cell_windows(
    const PacketDecomposition& d, const View& v,
    const std::vector<std::pair<const Tube*, double>>& tubes,
    const std::vector<cplx>& u, double sign, std::vector<cplx>& out) {
  if (d.n == 1) {
    std::vector<double> w(v.res, 0.0);
    for (const auto& tc : tubes) {
      const auto& w0 = profile_line(d, v, 0, tc.first->x_units[0]);
      for (std::size_t j = 0; j < v.res; ++j) w[j] += tc.second * w0[j];
    }
    for (std::size_t j = 0; j < v.res; ++j) out[j] += sign * u[j] * w[j];
    return;
  }
  // n == 2: bucket by the leading translate unit.
  std::map<int, std::vector<std::pair<int, double>>> by_a0;
  for (const auto& tc : tubes)
    by_a0[tc.first->x_units[0]].push_back({tc.first->x_units[1], tc.second});
  std::vector<double> inner(v.res);
  for (const auto& a0kv : by_a0) {
    inner.assign(v.res, 0.0);
    for (const auto& ac : a0kv.second) {
      const auto& w1 = profile_line(d, v, 1, ac.first);
      for (std::size_t j = 0; j < v.res; ++j) inner[j] += ac.second * w1[j];
    }
    const auto& w0 = profile_line(d, v, 0, a0kv.first);
    for (std::size_t j0 = 0; j0 < v.res; ++j0) {
      const double c0 = sign * w0[j0];
      if (c0 == 0.0) continue;
      const std::size_t base = j0 * v.res;
      for (std::size_t j1 = 0; j1 < v.res; ++j1)
        out[base + j1] += u[base + j1] * (c0 * inner[j1]);
    }
  }
}

// Raw samples of the component Phi^{(q)} on the view grid.
std::vector<cplx> assemble_component_raw(const Table& tb, std::size_t q,
                                         const View& v) {
  const PacketDecomposition& d = *tb.d;
  const std::size_t NG = v.stream->size();
  const double inv_children = 1.0 / (double)tb.partition.size();
  std::vector<cplx> raw(NG);
  for (std::size_t j = 0; j < NG; ++j) raw[j] = (*v.stream)[j] * inv_children;
  std::map<int, std::vector<std::pair<const Tube*, double>>> by_cell;
  for (const auto& e : tb.rows[q]) {
    const Tube& T = tb.tubes[(std::size_t)e.first];
    by_cell[T.cell].push_back({&T, e.second});
  }
  for (const auto& kv : by_cell)
    accumulate_cell_windows(d, v, kv.second, (*v.cells)[(std::size_t)kv.first],
                            +1.0, raw);
  return raw;
}

double raw_mass(const std::vector<cplx>& raw, double mass_scale) {
  double s = 0.0;
  for (const cplx& z : raw) s += std::norm(z);
  return s * mass_scale;
}

// Per-axis interior membership (no quadrature slack): offset from the
// nearest child center at most (1 - c)/2 times the child side.
bool axis_interior(double x, double center, double side, int per, double c) {
  const double u = x - (center - 0.5 * side);
  if (u < 0.0 || u > side) return false;
  const double child = side / (double)per;
  int k = (int)std::floor(u / child);
  k = std::min(std::max(k, 0), per - 1);
  const double off = u - ((double)k + 0.5) * child;
  return std::abs(off) <= 0.5 * (1.0 - c) * child;
}

}  // namespace

// ---------------------------------------------------------------------------
// Partitions and interiors

std::size_t CubePartition::flatten(const std::vector<int>& idx) const {
  std::size_t flat = 0;
  for (int v : idx) flat = flat * (std::size_t)per_axis + (std::size_t)v;
  return flat;
}

CubePartition make_partition(const CubeRegion& Q, int depth) {
  const int dims = (int)Q.center.size();
  require(dims >= 1 && dims <= 3, ErrorKind::validation,
          "make_partition: cube center must live in R^{n+1}");
  require(Q.side > 0, ErrorKind::validation,
          "make_partition: cube side must be positive");
  require(depth >= 0 && depth <= 8, ErrorKind::validation,
          "make_partition: depth must be in [0, 8]");
  CubePartition p;
  p.parent = Q;
  p.depth = depth;
  p.per_axis = 1 << depth;
  const std::size_t count = count_pow((std::size_t)p.per_axis, dims);
  require(count <= 262144, ErrorKind::validation,
          "make_partition: partition too large (children cap 262144)");
  const double child = Q.side / (double)p.per_axis;
  p.children.reserve(count);
  std::size_t idx[8];
  for (std::size_t flat = 0; flat < count; ++flat) {
    unflatten(flat, dims, (std::size_t)p.per_axis, idx);
    CubeRegion q;
    q.center = Vec(dims);
    for (int d = 0; d < dims; ++d)
      q.center(d) = Q.center(d) - 0.5 * Q.side + ((double)idx[d] + 0.5) * child;
    q.side = child;
    q.alpha = Q.alpha;
    p.children.push_back(std::move(q));
  }
  return p;
}

bool InteriorMask::contains(const Vec& point) const {
  const int dims = (int)Q.center.size();
  if ((int)point.size() != dims) return false;
  const int per = 1 << depth;
  for (int d = 0; d < dims; ++d)
    if (!axis_interior(point(d), Q.center(d), Q.side, per, c)) return false;
  return true;
}

InteriorMask interior(const CubeRegion& Q, double c, int depth,
                      int nodes_per_axis) {
  const int dims = (int)Q.center.size();
  require(dims >= 1 && dims <= 3, ErrorKind::validation,
          "interior: cube center must live in R^{n+1}");
  require(Q.side > 0, ErrorKind::validation,
          "interior: cube side must be positive");
  require(c >= 0.0 && c <= 0.5, ErrorKind::validation,
          "interior: localization parameter must be in [0, 1/2]");
  require(depth >= 0 && depth <= 8, ErrorKind::validation,
          "interior: depth must be in [0, 8]");
  const int per = 1 << depth;
  require(nodes_per_axis >= per && nodes_per_axis % per == 0,
          ErrorKind::validation,
          "interior: nodes per axis must be a positive multiple of 2^depth");
  const std::size_t total = count_pow((std::size_t)nodes_per_axis, dims);
  require(total <= (std::size_t)1 << 24, ErrorKind::validation,
          "interior: node lattice too large");

  InteriorMask m;
  m.Q = Q;
  m.c = c;
  m.depth = depth;
  m.nodes_per_axis = nodes_per_axis;
  m.inside.assign(total, false);

  // Per-axis pass table with half-cell slack: a node cell is dropped only
  // when it lies entirely outside the shrunken child, so the per-axis
  // dropped fraction is at most c exactly and the complement of the mask
  // has measure at most (n+1) c |Q|.
  const double delta = Q.side / (double)nodes_per_axis;
  const double child = Q.side / (double)per;
  const int npc = nodes_per_axis / per;
  std::vector<char> axis_pass((std::size_t)nodes_per_axis);
  for (int i = 0; i < nodes_per_axis; ++i) {
    const double u = ((double)i + 0.5) * delta;
    const int k = std::min(i / npc, per - 1);
    const double off = u - ((double)k + 0.5) * child;
    axis_pass[(std::size_t)i] =
        std::abs(off) <= 0.5 * (1.0 - c) * child + 0.5 * delta;
  }

  std::size_t idx[8];
  std::size_t kept = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    unflatten(flat, dims, (std::size_t)nodes_per_axis, idx);
    bool ok = true;
    for (int d = 0; d < dims && ok; ++d) ok = axis_pass[idx[d]] != 0;
    m.inside[flat] = ok;
    kept += ok ? 1u : 0u;
  }
  m.covered_fraction = (double)kept / (double)total;
  return m;
}

// ---------------------------------------------------------------------------
// Parent-cube averaging

ParentCubeReport select_parent_cube(const WaveState& f, const CubeRegion& QR,
                                    double c, int depth, double p,
                                    int scan_per_axis, int sample_res,
                                    Exec exec) {
  const int n = f.grid.n;
  const int dims = n + 1;
  require((int)QR.center.size() == dims, ErrorKind::validation,
          "select_parent_cube: cube center must live in R^{n+1}");
  require(QR.side > 0, ErrorKind::validation,
          "select_parent_cube: cube side must be positive");
  require(c >= 0.0 && c <= 0.5, ErrorKind::validation,
          "select_parent_cube: localization parameter must be in [0, 1/2]");
  require(depth >= 0 && depth <= 8, ErrorKind::validation,
          "select_parent_cube: depth must be in [0, 8]");
  require(p >= 1.0 && p <= 16.0, ErrorKind::validation,
          "select_parent_cube: integrability exponent must be in [1, 16]");
  require(scan_per_axis >= 1 && scan_per_axis <= 64, ErrorKind::validation,
          "select_parent_cube: scan lattice must have 1 to 64 points per axis");
  require(
      sample_res >= 4 && sample_res <= 256, ErrorKind::validation,
      "select_parent_cube: sample lattice must have 4 to 256 points per axis");
  const double R = QR.side;
  for (int d = 0; d < n; ++d)
    require(std::abs(QR.center(d)) + 2.0 * R <= 0.5 * f.grid.window(d) + 1e-9,
            ErrorKind::validation,
            "select_parent_cube: grid window does not cover the enlarged cube");

  // |f|^p on a sample_res^{n+1} midpoint lattice over the concentric cube of
  // side 4R (the candidate sweep's reach), spatial nodes snapped to the dual
  // grid. Constant quadrature weights cancel in the ratio.
  const std::size_t m = (std::size_t)sample_res;
  const double step = 4.0 * R / (double)sample_res;
  std::array<std::vector<double>, 2> xs;  // snapped spatial coordinates
  std::array<std::vector<long>, 2> js;    // their grid indices
  for (int d = 0; d < n; ++d) {
    xs[(std::size_t)d].resize(m);
    js[(std::size_t)d].resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double x = QR.center(d) - 2.0 * R + ((double)i + 0.5) * step;
      long j = std::lround(x / f.grid.dx(d) + (double)(f.grid.res / 2));
      j = std::min(std::max(j, 0L), (long)f.grid.res - 1);
      js[(std::size_t)d][i] = j;
      xs[(std::size_t)d][i] =
          ((double)j - (double)(f.grid.res / 2)) * f.grid.dx(d);
    }
  }
  std::vector<double> ts(m);
  for (std::size_t i = 0; i < m; ++i)
    ts[i] = QR.center(n) - 2.0 * R + ((double)i + 0.5) * step;

  const std::size_t per_slice = count_pow(m, n);
  std::vector<double> vp(m * per_slice);
  for (std::size_t it = 0; it < m; ++it) {
    const std::vector<cplx> field = physical_field(f, ts[it], exec);
    double* out = vp.data() + it * per_slice;
    if (n == 1) {
      for (std::size_t i0 = 0; i0 < m; ++i0)
        out[i0] = std::pow(std::abs(field[(std::size_t)js[0][i0]]), p);
    } else {
      for (std::size_t i0 = 0; i0 < m; ++i0) {
        const std::size_t row = (std::size_t)js[0][i0] * f.grid.res;
        for (std::size_t i1 = 0; i1 < m; ++i1)
          out[i0 * m + i1] =
              std::pow(std::abs(field[row + (std::size_t)js[1][i1]]), p);
      }
    }
  }

  // Membership-weighted sums via per-axis pass tables.
  auto weighted_sum = [&](const std::vector<char>& p0,
                          const std::vector<char>& p1,
                          const std::vector<char>& pt) {
    double s = 0.0;
    for (std::size_t it = 0; it < m; ++it) {
      if (!pt[it]) continue;
      const double* slice = vp.data() + it * per_slice;
      if (n == 1) {
        for (std::size_t i0 = 0; i0 < m; ++i0)
          if (p0[i0]) s += slice[i0];
      } else {
        for (std::size_t i0 = 0; i0 < m; ++i0) {
          if (!p0[i0]) continue;
          const double* row = slice + i0 * m;
          for (std::size_t i1 = 0; i1 < m; ++i1)
            if (p1[i1]) s += row[i1];
        }
      }
    }
    return s;
  };

  std::vector<char> q0(m), q1(m, 1), qt(m);
  for (std::size_t i = 0; i < m; ++i) {
    q0[i] = std::abs(xs[0][i] - QR.center(0)) <= 0.5 * R;
    if (n == 2) q1[i] = std::abs(xs[1][i] - QR.center(1)) <= 0.5 * R;
    qt[i] = std::abs(ts[i] - QR.center(n)) <= 0.5 * R;
  }
  const double SR = weighted_sum(q0, q1, qt);

  const double Cp = std::pow(2.0, n + 2) * (double)(n + 1);
  const double bound = 1.0 + c * Cp;
  const int per = 1 << depth;
  const std::size_t cands = count_pow((std::size_t)scan_per_axis, dims);
  std::vector<char> p0(m), p1(m, 1), pt(m);
  std::size_t idx[8];
  for (std::size_t cand = 0; cand < cands; ++cand) {
    unflatten(cand, dims, (std::size_t)scan_per_axis, idx);
    CubeRegion Q;
    Q.center = Vec(dims);
    for (int d = 0; d < dims; ++d)
      Q.center(d) = QR.center(d) - R +
                    (((double)idx[d] + 0.5) / (double)scan_per_axis) * 2.0 * R;
    Q.side = 2.0 * R;
    for (std::size_t i = 0; i < m; ++i) {
      p0[i] = axis_interior(xs[0][i], Q.center(0), Q.side, per, c);
      if (n == 2) p1[i] = axis_interior(xs[1][i], Q.center(1), Q.side, per, c);
      pt[i] = axis_interior(ts[i], Q.center(n), Q.side, per, c);
    }
    const double SI = weighted_sum(p0, p1, pt);
    const double achieved =
        SI > 0.0 ? std::pow(SR / SI, 1.0 / p)
                 : (SR > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    if (achieved <= bound + 1e-12) {
      ParentCubeReport rep;
      rep.Q = Q;
      rep.achieved = achieved;
      rep.bound = bound;
      rep.details = json{{"candidates_tried", cand + 1},
                         {"scan_per_axis", scan_per_axis},
                         {"sample_res", sample_res},
                         {"p", p},
                         {"c", c},
                         {"depth", depth}};
      return rep;
    }
  }
  fail_numeric(
      "select_parent_cube: no candidate cube satisfies the averaging bound "
      "(discretization too coarse)");
}

// ---------------------------------------------------------------------------
// Tables

double Table::column_sum_deviation() const {
  std::vector<double> sums(tubes.size(), 0.0);
  for (const auto& row : rows)
    for (const auto& e : row) sums[(std::size_t)e.first] += e.second;
  double dev = 0.0;
  for (double s : sums) dev = std::max(dev, std::abs(s - 1.0));
  return dev;
}

WaveState Table::component(std::size_t q, Exec) const {
  require(q < partition.size(), ErrorKind::validation,
          "table component: child index out of range");
  const auto& g = d->source->grid;
  View v;
  v.res = g.res;
  for (int a = 0; a < d->n; ++a) v.dx[(std::size_t)a] = g.dx(a);
  v.cells = &d->cell_fields;
  v.stream = &uniform_stream;
  return state_from_raw(*d, assemble_component_raw(*this, q, v));
}

Table build_table(const WaveState& phi, const WaveState& psi,
                  const CubeRegion& Q, double c, int C0, int N, Exec exec) {
  const int n = phi.grid.n;
  const int dims = n + 1;
  require(psi.grid.compatible_with(phi.grid), ErrorKind::validation,
          "build_table: companion wave grid incompatible with the source grid");
  require(C0 >= 1 && C0 <= 6, ErrorKind::validation,
          "build_table: partition depth must be in [1, 6]");
  require(N >= 1 && N <= 16, ErrorKind::validation,
          "build_table: decay order must be in [1, 16]");
  require(count_pow((std::size_t)1 << C0, dims) <= 262144,
          ErrorKind::validation, "build_table: partition too large");

  Table tb;
  tb.d = std::make_shared<PacketDecomposition>(
      decompose(phi, Q, c, /*N=*/3, /*n_omega=*/3, exec));
  const PacketDecomposition& d = *tb.d;
  tb.partition = make_partition(Q, C0);
  const std::size_t children = tb.partition.size();
  tb.rows.assign(children, {});
  tb.source_mass = d.source_mass;
  tb.companion_mass = mass(psi);
  tb.lattice_columns = d.xi_points.size() * d.x_points.size();

  const auto& g = phi.grid;
  const std::size_t NG = g.size();
  const std::size_t res = g.res;
  const double ms = g.cell_volume() / (double)NG;

  // Source field as the sum of the cell fields (the telescoping target) and
  // the true raw field (the identity reference).
  std::vector<cplx> u_src(NG, cplx(0, 0));
  for (const auto& cf : d.cell_fields)
    for (std::size_t j = 0; j < NG; ++j) u_src[j] += cf[j];
  double ref2 = 0.0, diff2 = 0.0;
  {
    std::vector<cplx> raw(NG, cplx(0, 0));
    std::size_t idx[8];
    for (std::size_t k = 0; k < NG; ++k) {
      unflatten(k, n, res, idx);
      raw[k] = phi.amplitudes[k] * (double)index_parity(idx, n);
    }
    fft_nd(raw, n, res, +1, exec);
    for (std::size_t k = 0; k < NG; ++k) {
      ref2 += std::norm(raw[k]);
      diff2 += std::norm(u_src[k] - raw[k]);
    }
  }
  require(ref2 > 0.0, ErrorKind::validation,
          "build_table: source wave has zero mass");
  tb.identity_residual = std::sqrt(diff2 / ref2);

  const int per = tb.partition.per_axis;
  const std::size_t nsp = (std::size_t)(2 * per);  // quadrature nodes per axis

  if (tb.companion_mass <= 0.0) {
    // Every column is degenerate: the uniform table.
    tb.uniform_stream = std::move(u_src);
    tb.degenerate_columns = tb.lattice_columns;
    const double per_child = raw_mass(tb.uniform_stream, ms) /
                             ((double)children * (double)children);
    tb.component_mass.assign(children, per_child);
    tb.total_mass = per_child * (double)children;
  } else {
    // --- companion frequency cells on the packet lattice (1/r spacing),
    // flattened for the density sweep.
    struct PEntry {
      std::size_t k0 = 0, k1 = 0;
      cplx a;
      double phase = 0;
    };
    std::vector<PEntry> entries;
    std::vector<std::size_t> cell_off;
    {
      std::map<std::array<long, 2>, std::vector<PEntry>> by_cell;
      std::size_t idx[8];
      for (std::size_t k = 0; k < psi.grid.size(); ++k) {
        if (!psi.mask[k] || psi.amplitudes[k] == cplx(0, 0)) continue;
        const Vec xi = psi.grid.node(k);
        std::array<long, 2> cell{0, 0};
        for (int a = 0; a < n; ++a)
          cell[(std::size_t)a] = std::lround(xi(a) * d.r);
        unflatten(k, n, psi.grid.res, idx);
        PEntry e;
        e.k0 = idx[0];
        e.k1 = n == 2 ? idx[1] : 0;
        e.a = psi.amplitudes[k];
        e.phase = psi.phase[k];
        by_cell[cell].push_back(e);
      }
      cell_off.push_back(0);
      for (auto& kv : by_cell) {
        entries.insert(entries.end(), kv.second.begin(), kv.second.end());
        cell_off.push_back(entries.size());
      }
    }
    const std::size_t n_psi_cells = cell_off.size() - 1;

    // --- quadrature lattice: two midpoint nodes per child per axis, spatial
    // nodes snapped to the dual grid.
    const std::size_t nodes_sp = count_pow(nsp, n);
    std::vector<double> xq(nodes_sp * (std::size_t)n);
    std::vector<std::size_t> child_sp(nodes_sp);
    {
      std::size_t idx[8];
      for (std::size_t sflat = 0; sflat < nodes_sp; ++sflat) {
        unflatten(sflat, n, nsp, idx);
        std::size_t csp = 0;
        for (int a = 0; a < n; ++a) {
          const double x = Q.center(a) - 0.5 * Q.side +
                           ((double)idx[a] + 0.5) * Q.side / (double)nsp;
          long j = std::lround(x / g.dx(a) + (double)(res / 2));
          j = std::min(std::max(j, 0L), (long)res - 1);
          xq[sflat * (std::size_t)n + (std::size_t)a] =
              ((double)j - (double)(res / 2)) * g.dx(a);
          csp = csp * (std::size_t)per + (idx[a] >> 1);
        }
        child_sp[sflat] = csp;
      }
    }
    std::vector<double> tq(nsp);
    for (std::size_t it = 0; it < nsp; ++it)
      tq[it] = Q.center(n) - 0.5 * Q.side +
               ((double)it + 0.5) * Q.side / (double)nsp;
    double wq = 1.0;
    for (int a = 0; a < dims; ++a) wq *= Q.side / (double)nsp;

    // --- companion energy density rho(x, t) = sum_cells |psi_cell(x, t)|^2,
    // by direct spectral sums with per-axis phase recurrences.
    std::vector<double> rho(nsp * nodes_sp, 0.0);
    const double cvpsi = psi.grid.cell_volume();
    const double rho_scale = cvpsi * cvpsi / std::pow(2.0 * M_PI, (double)n);
    for_each_index(nsp, exec, [&](std::size_t it) {
      const double dt = tq[it] - psi.time;
      std::vector<cplx> evolved(entries.size());
      for (std::size_t e = 0; e < entries.size(); ++e)
        evolved[e] = entries[e].a * std::polar(1.0, dt * entries[e].phase);
      std::vector<cplx> t0(psi.grid.res), t1(psi.grid.res);
      for (std::size_t sflat = 0; sflat < nodes_sp; ++sflat) {
        const double x0 = xq[sflat * (std::size_t)n];
        const cplx step0 = std::polar(1.0, x0 * psi.grid.dxi(0));
        cplx cur0 = std::polar(1.0, x0 * psi.grid.lo(0));
        for (std::size_t k = 0; k < psi.grid.res; ++k) {
          t0[k] = cur0;
          cur0 *= step0;
        }
        if (n == 2) {
          const double x1 = xq[sflat * (std::size_t)n + 1];
          const cplx step1 = std::polar(1.0, x1 * psi.grid.dxi(1));
          cplx cur1 = std::polar(1.0, x1 * psi.grid.lo(1));
          for (std::size_t k = 0; k < psi.grid.res; ++k) {
            t1[k] = cur1;
            cur1 *= step1;
          }
        }
        double dens = 0.0;
        for (std::size_t ci = 0; ci < n_psi_cells; ++ci) {
          cplx acc(0, 0);
          if (n == 2) {
            for (std::size_t e = cell_off[ci]; e < cell_off[ci + 1]; ++e)
              acc += evolved[e] * t0[entries[e].k0] * t1[entries[e].k1];
          } else {
            for (std::size_t e = cell_off[ci]; e < cell_off[ci + 1]; ++e)
              acc += evolved[e] * t0[entries[e].k0];
          }
          dens += std::norm(acc);
        }
        rho[it * nodes_sp + sflat] = dens * rho_scale;
      }
    });

    // Significant nodes only (the skipped tail is far below the degeneracy
    // threshold).
    std::vector<std::pair<std::size_t, std::size_t>> sig;  // (slice, node)
    for (std::size_t it = 0; it < nsp; ++it)
      for (std::size_t sflat = 0; sflat < nodes_sp; ++sflat)
        if (rho[it * nodes_sp + sflat] * wq > kNodeFloor * tb.companion_mass)
          sig.push_back({it, sflat});

    // --- coefficient columns, one per inventory tube.
    const double t_origin = d.source->time;
    std::vector<std::vector<std::pair<int, double>>> kept(d.tubes.size());
    std::vector<char> nondeg(d.tubes.size(), 0);
    for_each_index(d.tubes.size(), exec, [&](std::size_t ti) {
      const Tube& T = d.tubes[ti];
      std::vector<double> col(children, 0.0);
      for (const auto& sn : sig) {
        const double trel = tq[sn.first] - t_origin;
        double dist2 = 0.0;
        for (int a = 0; a < n; ++a) {
          const double u = xq[sn.second * (std::size_t)n + (std::size_t)a] -
                           (T.x(a) + T.velocity(a) * trel);
          dist2 += u * u;
        }
        const double base = 1.0 / (1.0 + std::sqrt(dist2) / T.width);
        const double chi2 = ipow(base, 2 * N);
        const std::size_t child =
            child_sp[sn.second] * (std::size_t)per + (sn.first >> 1);
        col[child] += chi2 * rho[sn.first * nodes_sp + sn.second] * wq;
      }
      double mT = 0.0;
      for (double v : col) mT += v;
      if (mT <= kDegenerateThreshold * tb.companion_mass) return;
      nondeg[ti] = 1;
      double keptsum = 0.0;
      for (std::size_t q = 0; q < children; ++q) {
        const double coef = col[q] / mT;
        if (coef >= kCoefficientFloor) {
          kept[ti].push_back({(int)q, coef});
          keptsum += coef;
        }
      }
      for (auto& e : kept[ti]) e.second /= keptsum;
    });

    // Explicit tubes and sparse rows.
    for (std::size_t ti = 0; ti < d.tubes.size(); ++ti) {
      if (!nondeg[ti]) continue;
      const int newidx = (int)tb.tubes.size();
      tb.tubes.push_back(d.tubes[ti]);
      for (const auto& e : kept[ti])
        tb.rows[(std::size_t)e.first].push_back({newidx, e.second});
    }
    tb.degenerate_columns = tb.lattice_columns - tb.tubes.size();

    // --- uniform stream: the source field minus the explicit packets.
    View vf;
    vf.res = res;
    for (int a = 0; a < n; ++a) vf.dx[(std::size_t)a] = g.dx(a);
    vf.cells = &d.cell_fields;
    {
      std::map<int, std::vector<std::pair<const Tube*, double>>> by_cell;
      for (const Tube& T : tb.tubes) by_cell[T.cell].push_back({&T, 1.0});
      for (const auto& kv : by_cell)
        accumulate_cell_windows(d, vf, kv.second,
                                d.cell_fields[(std::size_t)kv.first], -1.0,
                                u_src);
    }
    tb.uniform_stream = std::move(u_src);
    vf.stream = &tb.uniform_stream;

    // --- component masses on a cropped spectral grid: the spectrum occupies
    // a centered block, so cropping to it loses nothing and shrinks the
    // assembly cost.
    std::size_t kmax = 0;
    {
      std::size_t idx[8];
      for (const auto& sp : d.projected)
        for (std::size_t t = 0; t < sp.idx.size(); ++t) {
          unflatten(sp.idx[t], n, res, idx);
          for (int a = 0; a < n; ++a) {
            const long off = (long)idx[a] - (long)(res / 2);
            kmax = std::max(kmax, (std::size_t)std::llabs(off));
          }
        }
      const double spill = d.bump.spectral_radius() / d.s;
      kmax += (std::size_t)std::ceil(spill / g.dxi(0)) + 2;
    }
    std::size_t res_m = 8;
    while (res_m < 2 * (kmax + 1) && res_m < res) res_m *= 2;
    res_m = std::min(res_m, res);

    View vm;
    std::vector<std::vector<cplx>> cells_m;
    std::vector<cplx> stream_m;
    const std::size_t NGm = count_pow(res_m, n);
    const double ms_m = g.cell_volume() / (double)NGm;
    if (res_m == res) {
      vm.res = vf.res;
      vm.dx = vf.dx;
      vm.cells = vf.cells;
      vm.stream = &tb.uniform_stream;
    } else {
      cells_m.assign(d.cell_fields.size(), {});
      std::size_t idx[8];
      std::size_t midx[8];
      for (std::size_t ci = 0; ci < d.projected.size(); ++ci) {
        std::vector<cplx> buf(NGm, cplx(0, 0));
        const auto& sp = d.projected[ci];
        for (std::size_t t = 0; t < sp.idx.size(); ++t) {
          unflatten(sp.idx[t], n, res, idx);
          std::size_t flat_m = 0;
          for (int a = 0; a < n; ++a) {
            const long jm = (long)idx[a] - (long)(res / 2) + (long)(res_m / 2);
            midx[a] = (std::size_t)jm;
            flat_m = flat_m * res_m + midx[a];
          }
          buf[flat_m] = sp.val[t] * (double)index_parity(midx, n);
        }
        fft_nd(buf, n, res_m, +1, Exec::serial);
        cells_m[ci] = std::move(buf);
      }
      vm.res = res_m;
      for (int a = 0; a < n; ++a)
        vm.dx[(std::size_t)a] = g.window(a) / (double)res_m;
      vm.cells = &cells_m;
      stream_m.assign(NGm, cplx(0, 0));
      for (const auto& cf : cells_m)
        for (std::size_t j = 0; j < NGm; ++j) stream_m[j] += cf[j];
      std::map<int, std::vector<std::pair<const Tube*, double>>> by_cell;
      for (const Tube& T : tb.tubes) by_cell[T.cell].push_back({&T, 1.0});
      for (const auto& kv : by_cell)
        accumulate_cell_windows(d, vm, kv.second,
                                cells_m[(std::size_t)kv.first], -1.0,
                                stream_m);
      vm.stream = &stream_m;
    }

    tb.component_mass.assign(children, 0.0);
    const double stream_child_mass =
        raw_mass(*vm.stream, ms_m) / ((double)children * (double)children);
    std::vector<std::size_t> occupied;
    for (std::size_t q = 0; q < children; ++q) {
      if (tb.rows[q].empty())
        tb.component_mass[q] = stream_child_mass;
      else
        occupied.push_back(q);
    }
    for_each_index(occupied.size(), exec, [&](std::size_t oi) {
      const std::size_t q = occupied[oi];
      const std::vector<cplx> raw = assemble_component_raw(tb, q, vm);
      tb.component_mass[q] = raw_mass(raw, ms_m);
    });
    tb.total_mass = std::accumulate(tb.component_mass.begin(),
                                    tb.component_mass.end(), 0.0);
    tb.params = json{{"mass_pass_resolution", res_m},
                     {"quadrature_nodes_per_axis", nsp},
                     {"companion_cells", n_psi_cells},
                     {"significant_nodes", sig.size()}};
  }

  tb.params["side"] = Q.side;
  tb.params["r"] = d.r;
  tb.params["tube_width"] = d.s;
  tb.params["c"] = c;
  tb.params["C0"] = C0;
  tb.params["N"] = N;
  tb.params["children"] = children;
  tb.params["cells"] = d.xi_points.size();
  tb.params["inventory_tubes"] = d.tubes.size();
  tb.params["explicit_tubes"] = tb.tubes.size();
  tb.params["lattice_columns"] = tb.lattice_columns;
  tb.params["degenerate_columns"] = tb.degenerate_columns;
  tb.params["coefficient_floor"] = kCoefficientFloor;
  tb.params["degeneracy_threshold"] = kDegenerateThreshold;
  tb.params["identity_residual"] = tb.identity_residual;
  tb.params["mass_ratio"] = tb.mass_ratio();
  return tb;
}

double cross_term_norm(const Table& table, const WaveState& psi,
                       std::size_t q1, std::size_t q2, double c,
                       int t_samples, Exec exec) {
  require(q1 < table.partition.size() && q2 < table.partition.size(),
          ErrorKind::validation, "cross_term_norm: child index out of range");
  require(q1 != q2, ErrorKind::validation,
          "cross_term_norm: the diagonal term is excluded (child cubes must "
          "differ)");
  require(c >= 0.0 && c < 1.0, ErrorKind::validation,
          "cross_term_norm: localization parameter must be in [0, 1)");
  require(t_samples >= 2 && t_samples <= 256, ErrorKind::validation,
          "cross_term_norm: time sample count must be in [2, 256]");
  const auto& g = table.d->source->grid;
  require(psi.grid.compatible_with(g), ErrorKind::validation,
          "cross_term_norm: companion wave grid incompatible with the table "
          "grid");
  const double M1 = table.source_mass;
  const double M2 = mass(psi);
  if (M2 <= 0.0) return 0.0;

  const int n = g.n;
  const CubeRegion& q = table.partition.children[q2];
  const double side = (1.0 - c) * q.side;
  for (int a = 0; a < n; ++a)
    require(std::abs(q.center(a)) + 0.5 * side <= 0.5 * g.window(a) + 1e-9,
            ErrorKind::validation,
            "cross_term_norm: cube escapes the spatial window");

  const WaveState comp = table.component(q1, exec);
  std::array<std::pair<long, long>, 2> rng;
  for (int a = 0; a < n; ++a) {
    const double lo = q.center(a) - 0.5 * side;
    const double hi = q.center(a) + 0.5 * side;
    long jlo = (long)std::ceil(lo / g.dx(a) + (double)(g.res / 2) - 0.5);
    long jhi = (long)std::floor(hi / g.dx(a) + (double)(g.res / 2) - 0.5);
    jlo = std::max(jlo, 0L);
    jhi = std::min(jhi, (long)g.res - 1);
    rng[(std::size_t)a] = {jlo, jhi};
    if (jlo > jhi) return 0.0;
  }
  const double dt = side / (double)t_samples;
  double acc = 0.0;
  for (int it = 0; it < t_samples; ++it) {
    const double t = q.center(n) - 0.5 * side + ((double)it + 0.5) * dt;
    const std::vector<cplx> f1 = physical_field(comp, t, exec);
    const std::vector<cplx> f2 = physical_field(psi, t, exec);
    if (n == 1) {
      for (long j = rng[0].first; j <= rng[0].second; ++j)
        acc += std::norm(f1[(std::size_t)j] * f2[(std::size_t)j]);
    } else {
      for (long j0 = rng[0].first; j0 <= rng[0].second; ++j0)
        for (long j1 = rng[1].first; j1 <= rng[1].second; ++j1) {
          const std::size_t flat = (std::size_t)j0 * g.res + (std::size_t)j1;
          acc += std::norm(f1[flat] * f2[flat]);
        }
    }
  }
  acc *= g.x_cell_volume() * dt;
  return std::sqrt(acc) / std::sqrt(M1 * M2);
}

void write_table_csv(const Table& table, const std::string& csv_path) {
  std::FILE* fp = std::fopen(csv_path.c_str(), "w");
  require(fp != nullptr, ErrorKind::io,
          "table csv: cannot open CSV for writing: " + csv_path);
  std::fprintf(fp, "child,component_mass,max_coefficient,degenerate_columns\n");
  const double uniform = 1.0 / (double)table.partition.size();
  for (std::size_t q = 0; q < table.partition.size(); ++q) {
    double mx = 0.0;
    for (const auto& e : table.rows[q]) mx = std::max(mx, e.second);
    if (table.rows[q].empty()) mx = uniform;
    std::fprintf(fp, "%zu,%.17g,%.17g,%zu\n", q, table.component_mass[q], mx,
                 table.degenerate_columns);
  }
  std::fclose(fp);
}

// ---------------------------------------------------------------------------
// Scale recursion

RecursionTrace iterate_recursion(double p, int n, double C, double C_big,
                                 double R0, double R_max) {
  require(p > 1.0, ErrorKind::validation,
          "iterate_recursion: exponent p must exceed 1");
  require(n >= 1 && n <= 3, ErrorKind::validation,
          "iterate_recursion: dimension must be in [1, 3]");
  require(C > 0.0, ErrorKind::validation,
          "iterate_recursion: growth constant must be positive");
  require(C_big >= 0.0, ErrorKind::validation,
          "iterate_recursion: additive constant must be nonnegative");
  require(R0 >= 1.0, ErrorKind::validation,
          "iterate_recursion: initial scale must be at least 1");
  require(R_max >= R0, ErrorKind::validation,
          "iterate_recursion: maximal scale must be at least the initial one");
  require(std::log2(R_max / R0) <= 4096.0, ErrorKind::validation,
          "iterate_recursion: too many dyadic steps (cap 4096)");

  RecursionTrace tr;
  tr.exponent =
      0.5 * (double)(n + 3) * (1.0 / p - (double)(n + 1) / (double)(n + 3));
  auto c_of = [&](double R) {
    return std::min(0.25, std::pow(R, tr.exponent / (2.0 * C)));
  };
  double R = R0, A = 1.0;
  tr.R.push_back(R);
  tr.A.push_back(A);
  tr.c.push_back(c_of(R));
  tr.sup = A;
  while (2.0 * R <= R_max * (1.0 + 1e-12)) {
    R *= 2.0;
    const double cc = c_of(R);
    A = (1.0 + cc * C) * A + C_big * std::pow(cc, -C) * std::pow(R, tr.exponent);
    tr.R.push_back(R);
    tr.A.push_back(A);
    tr.c.push_back(cc);
    tr.sup = std::max(tr.sup, A);
    if (!std::isfinite(A) || A > 1e12) break;
  }
  tr.bounded = std::isfinite(tr.sup) && tr.sup <= kRecursionSentinel;
  return tr;
}

double recursion_product(const RecursionTrace& trace, double C) {
  double logs = 0.0;
  for (std::size_t k = 1; k < trace.c.size(); ++k)
    logs += std::log1p(trace.c[k] * C);
  return std::exp(logs);
}

void write_recursion_csv(const RecursionTrace& trace,
                         const std::string& csv_path) {
  std::FILE* fp = std::fopen(csv_path.c_str(), "w");
  require(fp != nullptr, ErrorKind::io,
          "recursion csv: cannot open CSV for writing: " + csv_path);
  std::fprintf(fp, "R,A,c\n");
  for (std::size_t k = 0; k < trace.R.size(); ++k)
    std::fprintf(fp, "%.17g,%.17g,%.17g\n", trace.R[k], trace.A[k], trace.c[k]);
  std::fclose(fp);
}

}  // namespace bilin
