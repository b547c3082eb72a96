#pragma once
// Energy across thickened normal cones: point-cloud neighborhoods S(r) of a
// sampled conic surface in spacetime, L^2 norms of free waves over them, and
// an oscillatory-kernel decay probe for the estimate behind those norms.

#include <vector>

#include "bilin/freewave.hpp"
#include "bilin/geometry.hpp"

namespace bilin {

// ---------------------------------------------------------------------------
// Thickened surfaces.
//
// The r-neighborhood of a sampled surface piece, reconstructed piecewise
// linearly: a spacetime point belongs to S(r) when some cloud point sees it
// within distance `patch_validity` along its tangent plane and within r along
// its face normal. Cloud points with a degenerate (zero) face normal fall
// back to a Euclidean ball of radius r. A fixed ball around the origin is
// excluded (the cone minus its apex); its radius is set at construction from
// the smallest sampled |alpha| and does not change with r, so membership is
// monotone in r.
struct ThickenedSurface {
  ConeCloud cloud;
  double r = 0.0;              // thickness
  double patch_validity = 0.0; // tangential acceptance radius per cloud point
  double apex_exclusion = 0.0; // excluded ball radius around the origin
  int k_nearest = 8;           // nominal patch fan-out (documentation)

  // Spatial hash over cloud points; cell size equals the search radius.
  double cell = 0.0;
  Vec lo;                                   // hash origin in R^3
  std::vector<long long> bucket_keys;       // sorted cell keys
  std::vector<std::vector<int>> bucket_pts; // point indices per key

  // Membership of a spacetime point p = (x, t) in R^3.
  bool contains(const Vec& p) const;

  // Slice mask S_t(r) on the dual spatial grid of `grid` (row-major, one
  // char per spatial node).
  std::vector<char> slice_mask(const FrequencyGrid& grid, double t,
                               Exec exec = Exec::parallel) const;

  // Time extent of the thickened cloud [min_t - r, max_t + r].
  double t_lo() const;
  double t_hi() const;
};

// Builds the neighborhood structure for one thickness r > 0. The cloud must
// be nonempty, carry a positive patch radius, and live in R^3 (n = 2).
ThickenedSurface thicken(const ConeCloud& cloud, double r);

// ---------------------------------------------------------------------------
// Energy in a neighborhood.
//
// L^2 norm of the wave over the membership mask,
//   E = ( sum_slices sum_{x in S_t(r)} |psi(x,t)|^2 / (2 pi)^n * xvol * dt )^{1/2},
// with midpoint time slices spanning the thickened cloud's time extent.
// Slice integrals use the mass normalization, so saturation (mask covering
// the full grid at every slice) gives exactly E^2 = mass * (time span).
double energy_in_neighborhood(const WaveState& psi, const ThickenedSurface& S,
                              int t_samples = 33, Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Thickness sweeps.

struct EnergySweep {
  std::vector<double> r;       // thicknesses, ascending
  std::vector<double> energy;  // sup over the family of E / sqrt(mass)
  std::vector<double> running; // slope between consecutive entries (first NaN)
  double slope = 0.0;          // least-squares exponent of energy vs r
  double mass = 0.0;           // largest family mass (echo)
  bool lfw_pass = false;       // transversality precondition
  double lfw_infimum = 0.0;
  json details;                // warning when the precondition fails
};

// Sweeps the thickness over r_list for the normal cone of the intersection
// curve of (S1, S2) at translate h, sampled along `alphas`. The energy at
// each r is the family supremum of the mass-normalized L^2 norm; the slope
// is the fitted log-log exponent of that value against r. The transversality
// precondition (LFW) is checked and reported; its failure marks a control
// run (warning in details), not an error.
EnergySweep energy_ratio_sweep(const std::vector<WaveState>& family,
                               const SurfaceSpec& S1, const SurfaceSpec& S2,
                               const Vec& h, const std::vector<double>& alphas,
                               const std::vector<double>& r_list,
                               int t_samples = 33, Exec exec = Exec::parallel);

// CSV with header r,energy,mass,slope_running (one row per thickness).
void write_energy_csv(const std::string& path, const EnergySweep& sweep);

// ---------------------------------------------------------------------------
// Oscillatory kernel probe.
//
//   K(x,t) = integral e^{-i (x.xi + t phi2(xi))} eta(xi) dxi
//
// with eta a smooth bump matched to the second surface's domain (roll-off
// fraction of the domain scale). Probes must stay outside an angular
// neighborhood of the normal cone CN(S2) = { lambda N2(xi) }, where the
// phase is stationary; the zero probe is always allowed and returns the
// plain window integral.
struct KernelProbeReport {
  std::vector<double> values;  // |K| per probe, probe order preserved
  double eta_integral = 0.0;   // integral of the window = |K(0)|
  double fitted_exponent = 0.0;// -slope of log |K| vs log |probe|, nonzero probes
  json details;
};

KernelProbeReport kernel_decay_probe(const SurfaceSpec& S2,
                                     const std::vector<Vec>& probes,
                                     double rolloff = 0.1,
                                     double exclusion = 0.15,
                                     int quad_res = 192, int dir_samples = 48,
                                     Exec exec = Exec::parallel);

}  // namespace bilin
