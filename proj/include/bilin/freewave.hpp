#pragma once
// Discretized free waves: spectral states on frequency grids, the unitary
// evolution e^{it phi(D)}, physical-space fields via FFT, mass/margin
// bookkeeping, bilinear L^p norms over space-time cubes, empirical scaling
// exponents, and the focusing counterexample generators.
//
// Conventions (also recorded in the README): a state holds amplitude samples
// a(xi) = f(xi) * sqrt(1 + |grad phi(xi)|^2) on a uniform frequency grid; the
// physical field is field(x) = sum_k a_k exp(i x.xi_k) * cellvol, so the
// discrete Parseval identity reads
//   sum_x |field|^2 dx^n = (2 pi)^n * sum_k |a_k|^2 dxi^n,
// and mass(w) := sum_k |a_k|^2 dxi^n (no 2 pi factors).

#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bilin/fft.hpp"
#include "bilin/geometry.hpp"

namespace bilin {

// ---------------------------------------------------------------------------
// Frequency grids and their dual spatial grids.

struct FrequencyGrid {
  int n = 0;
  std::size_t res = 0;  // points per axis, power of two
  Vec lo;               // lower corner of the covered box
  Vec dxi;              // per-axis spacing

  std::size_t size() const {
    std::size_t t = 1;
    for (int d = 0; d < n; ++d) t *= res;
    return t;
  }
  double cell_volume() const {
    double v = 1;
    for (int d = 0; d < n; ++d) v *= dxi(d);
    return v;
  }
  // Node xi_k at flat row-major index (axis 0 slowest); cell centers.
  Vec node(std::size_t flat) const;
  // Dual spatial spacing dx_d = 2 pi / (res * dxi_d) and window res * dx_d.
  double dx(int axis) const;
  double window(int axis) const;
  double x_cell_volume() const {
    double v = 1;
    for (int d = 0; d < n; ++d) v *= dx(d);
    return v;
  }
  // Spatial node x_j = (j - res/2) dx per axis, flat row-major index.
  Vec x_node(std::size_t flat) const;
  bool compatible_with(const FrequencyGrid& o) const;
};

// Grid covering the enlarged domain of S with `pad_cells` cells of padding
// (at least 2 required by the coverage invariant).
FrequencyGrid make_grid(const SurfaceSpec& S, std::size_t res,
                        int pad_cells = 4);

// Grid with an explicit per-axis spacing, centered on the enlarged domain of
// S; trips if the extent res*dxi fails to cover it with 2 cells of padding.
FrequencyGrid make_grid_spacing(const SurfaceSpec& S, std::size_t res,
                                const Vec& dxi);

// Two grids with identical spacings (hence one shared spatial grid), each
// centered on its own surface.
std::pair<FrequencyGrid, FrequencyGrid> make_common_grids(
    const SurfaceSpec& S1, const SurfaceSpec& S2, std::size_t res,
    int pad_cells = 4);

// ---------------------------------------------------------------------------
// Wave states.

struct WaveState {
  FrequencyGrid grid;
  std::shared_ptr<const SurfaceSpec> surface;
  std::vector<cplx> amplitudes;  // a(xi_k), zero outside the enlarged domain
  double time = 0.0;
  // Cached per-node tables (phase only valid where mask is set).
  std::vector<double> phase;  // phi(xi_k)
  std::vector<char> mask;     // node inside the enlarged domain
  Vec vel_lo, vel_hi;         // bounding box of grad phi over masked nodes
  double velocity_diam() const { return (vel_hi - vel_lo).norm(); }
};

using Density = std::function<cplx(const Vec&)>;

// Samples a(xi) = f(xi) * sqrt(1 + |grad phi|^2) on the grid. `supersample`
// raises the per-cell sampling to an s x s ... mean (for indicator data).
// f must vanish at grid nodes outside the enlarged domain (margin error).
WaveState init_wave(const SurfaceSpec& S, const Density& f,
                    const FrequencyGrid& grid, int supersample = 1);

// Advances the state by dt (relative): amplitudes *= e^{i dt phi(xi)}.
WaveState evolve(const WaveState& w, double dt);

// Scales amplitudes so that mass(w) == target; zero states trip.
void normalize_mass(WaveState& w, double target = 1.0);

double mass(const WaveState& w);

// Distance from the amplitude support to the complement of the enlarged
// domain; +infinity for the zero state.
double margin(const WaveState& w);
// Side-indexed variant for a pair (k = 1 or 2).
double margin(const WaveState& w1, const WaveState& w2, int k);

// Field at absolute time t on the dual spatial grid (row-major, x_node
// layout): field(x_j) = sum_k a_k e^{i (t - w.time) phi_k} e^{i x_j . xi_k}
// * cellvol.
std::vector<cplx> physical_field(const WaveState& w, double t,
                                 Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Space-time cubes and bilinear norms.

struct CubeRegion {
  Vec center;          // (x, t) in R^{n+1}
  double side = 0.0;   // R
  double alpha = 1.0;  // dilation factor for alpha Q
  double effective_side() const { return side * alpha; }
};

// || u1 u2 ||_{L^p(Q)} by midpoint-in-space / trapezoid-in-time quadrature
// with t_samples uniform slices (t_samples <= 0 picks the default, one slice
// per spatial grid point). Multiple exponents share one field sweep.
// Errors: incompatible grids (validation); cube outside the spatial window or
// window smaller than the aliasing guard 2 R diam(grad phi(D~)) (numeric).
std::vector<double> bilinear_lp_norms(const WaveState& w1, const WaveState& w2,
                                      const CubeRegion& Q,
                                      const std::vector<double>& p_list,
                                      int t_samples,
                                      Exec exec = Exec::parallel);
double bilinear_lp_norm(const WaveState& w1, const WaveState& w2,
                        const CubeRegion& Q, double p, int t_samples,
                        Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Empirical scaling of A_p(R).

struct BilinearProblem {
  WaveState w1, w2;
  CubeRegion Q;
  int t_samples = 0;
};

using PairGenerator = std::function<BilinearProblem(double R)>;

struct ScalingSample {
  double R = 0, ratio = 0, mass1 = 0, mass2 = 0, runtime_ms = 0;
};
struct ScalingResult {
  double slope = 0;
  std::vector<ScalingSample> samples;
};

// Least-squares slope of log(ratio) against log(R), where
// ratio = ||u1 u2||_{L^p(Q_R)} / (M1 M2)^{1/2} and the data for each R come
// fresh from the generator. R_list: >= 3 dyadic (power-of-two) increasing
// values.
ScalingResult estimate_scaling_exponent(const PairGenerator& gen, double p,
                                        const std::vector<double>& R_list,
                                        Exec exec = Exec::parallel);

// The fit alone (log-log slope of ratios against Rs).
double fit_ratio_slope(const std::vector<double>& Rs,
                       const std::vector<double>& ratios);

// ---------------------------------------------------------------------------
// Focusing data generators.

struct WavePairData {
  SurfaceSpec S1, S2;
  Density f1, f2;
  json meta;  // plate centers/axes/widths
};

// Standard focusing pair: for each side an indicator plate centered at the
// domain center, long axis (width R^{-1/2}) along the intersection-curve
// tangent for the center-sum translate, thin axis (width R^{-1}) along the
// conormal; L^2 normalization happens at init time via normalize_mass.
WavePairData generate_knapp(const SurfaceSpec& S1, const SurfaceSpec& S2,
                            double R);

// The flat-direction pair: hyperbolic paraboloids over neighborhoods of
// (1,1) and (-1,-1) with plates aligned with the line direction (1,1)/sqrt2.
WavePairData generate_lee_pair(double R);

// ---------------------------------------------------------------------------
// Spectral snapshot IO: header (n, resolution, extent) then row-major
// complex64 (float32 re/im) pairs.

void write_spectral_snapshot(const std::string& path, const WaveState& w);
struct SpectralSnapshot {
  FrequencyGrid grid;
  std::vector<cplx> amplitudes;
};
SpectralSnapshot read_spectral_snapshot(const std::string& path);

}  // namespace bilin
