#pragma once
// Wave-packet decomposition of a free wave over a space-time cube: frequency
// lattice with Voronoi cells, translation-averaged sharp projectors, a
// nonnegative L1-normalized bump partition on the spatial tube lattice, and
// the verification operators (reconstruction, far-tube decay, weighted
// quadratic estimate, mass redistribution, commutator growth).
//
// Scales: r = 2^{-J} R in [R^{1/2}, 2 R^{1/2}); frequency lattice r^{-1} Z^n
// intersected with the base domain; spatial lattice (c^{-2} r) Z^n; packet
// f_T(0) = eta((x - x_T) c^2/r) * sum_j w_j [shifted-cell projection of f].

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "bilin/freewave.hpp"

namespace bilin {

// ---------------------------------------------------------------------------
// Bump profile eta0 = |g|^2 with g a product of per-axis band-limited
// factors: a numerically tabulated C^infinity bump transform times
// ceil(N/2) sinc factors. The total per-axis bandwidth keeps the spectrum of
// eta0 inside the unit ball; eta0 >= 0 and integrates to 1, so the lattice
// translates x -> eta0(x - k) form an exact partition of unity (Poisson).

struct BumpProfile {
  int n = 0;         // ambient dimension
  int N = 0;         // decay order the profile is built for
  int mu = 0;        // sinc factor count per axis, ceil(N/2)
  double a = 0;      // half-bandwidth of the smooth factor
  double b2 = 0;     // half-bandwidth per sinc factor
  double ystep = 0;  // 1-d table resolution
  double ymax = 0;   // profile treated as 0 beyond this
  std::vector<double> table;  // p(y) samples on [0, ymax], integral 1

  double value1d(double y) const;   // per-axis factor p(y)
  double value(const Vec& y) const; // eta0(y) = prod_d p(y_d)
  double spectral_radius() const;   // radius of supp(eta0 hat), <= 1
  json to_json() const;
};

// Cached per (n, N).
const BumpProfile& make_bump(int n, int N);

// ---------------------------------------------------------------------------
// Tubes: spatial lattice point, frequency lattice point, velocity.

struct Tube {
  std::array<int, 3> x_units{};   // x_T / (c^{-2} r), integer lattice coords
  std::array<int, 3> xi_units{};  // xi_T * r, integer lattice coords
  Vec x;                          // x_T
  Vec xi;                         // xi_T
  Vec velocity;                   // -grad phi(xi_T)
  double width = 0;               // c^{-2} r
  double mass = 0;                // packet mass (same convention as mass())
  int cell = -1;                  // index into xi_points
};

// Disk-style cutoff (1 + |x - x_T + grad phi(xi_T) t| / width)^{-N}.
double tube_cutoff(const Tube& T, const Vec& x, double t, int N);

struct SparseSpectrum {
  std::vector<std::size_t> idx;
  std::vector<cplx> val;
};

// ---------------------------------------------------------------------------
// The decomposition object. Packets are synthesized lazily from the per-cell
// averaged projections; `tubes` inventories every tube whose packet mass
// exceeds kTubeMassFloor * M(f).

struct PacketDecomposition {
  int n = 0;
  double R = 0, r = 0, c = 0, s = 0;  // s = c^{-2} r
  int N = 0, n_omega = 0;
  std::shared_ptr<const WaveState> source;
  CubeRegion Q;
  BumpProfile bump;

  std::vector<Vec> xi_points;                  // frequency lattice, lex order
  std::vector<SparseSpectrum> projected;       // averaged projection per cell
  std::vector<std::vector<cplx>> cell_fields;  // raw spatial fields u_cell
  std::vector<Vec> omega_nodes;
  std::vector<double> omega_weights;           // normalized to sum 1
  double omega_radius = 0;                     // shift ball radius, 0.5/r

  std::vector<Vec> x_points;     // core spatial lattice (window + tails)
  std::vector<Tube> tubes;       // nonnegligible-mass inventory
  double source_mass = 0;
  double source_margin = 0;
  json params;                   // sidecar: scales, counts, bump, constants

  // eta((x_j - x_T)/s) for flat spatial index j, separable in the axes.
  double eta_at(const Tube& T, std::size_t flat) const;
};

// Mass floor for the tube inventory, relative to M(f).
inline constexpr double kTubeMassFloor = 1e-7;

// Admissible window for the localization parameter c at scale R.
inline double c_lower_bound(double R) { return 0.5 * std::pow(R, -0.25); }
inline constexpr double kCUpperBound = 0.25;

PacketDecomposition decompose(const WaveState& f, const CubeRegion& Q,
                              double c, int N = 10, int n_omega = 3,
                              Exec exec = Exec::parallel);

// Lazy packet synthesis: f_T as a wave state on the source grid. The
// amplitudes are the windowed DFT of the sampled profile times the cell
// field; coefficients below 1e-14 of the peak, or falling outside the
// enlarged domain (window-wrap leakage of the sampled profile), are dropped.
WaveState packet(const PacketDecomposition& d, const Tube& T);

// Projects raw spatial samples on the source grid back to a wave state
// (inverse of the cell-field convention: physical field = cell_volume *
// twiddle * raw). Same chop and leakage guard as packet synthesis; used for
// superpositions of windowed cell fields.
WaveState state_from_raw(const PacketDecomposition& d, std::vector<cplx> raw);

// || f - sum_T f_T ||_2 / || f ||_2 over the full lattice (the spatial sum
// is folded into the exact partition field, so every translate contributes).
double reconstruction_residual(const PacketDecomposition& d,
                               Exec exec = Exec::parallel);

// Max deviation |sum_{x_T} eta^{x_T}(x_j) - 1| over the spatial grid.
double partition_unity_deviation(const PacketDecomposition& d);

// Largest margin loss margin(f) - margin(f_T) over all packets, evaluated
// on the continuum spectral support (projected cell support widened by the
// profile bandwidth); the support is translate-independent.
double margin_shift(const PacketDecomposition& d);

// Largest spectral support diameter over all packets, on the same
// continuum support.
double packet_spectral_diameter(const PacketDecomposition& d);

// L-infinity decay of far packets over Q: tubes are probed in dyadic
// distance annuli [base 2^i R, base 2^{i+1} R), the per-annulus maximum of
// ||f_T||_{L^inf(Q)} is fitted log-log against distance. `max_ratio` is
// max ||f_T||_inf dist^N / (c^{-C0} M^{1/2}) with C0 = 2 recorded.
struct FarTubeReport {
  double max_ratio = 0;
  double exponent = 0;   // fitted decay exponent (positive)
  int bins_used = 0;
  json details;
};
FarTubeReport far_tube_decay(const PacketDecomposition& d, const CubeRegion& Q,
                             double base_mult = 4.0, int n_bins = 3,
                             Exec exec = Exec::parallel);

// Weighted quadratic estimate: sum_T sup_q (1 + d(q,T)/s)^N ||f_T||^2_{L2(q)}
// over the fine partition of Q at scale r, as a ratio to r M(f). Tubes are
// processed in decreasing mass order until `coverage` of the total inventory
// mass is reached (budget-capped; the omitted tail only lowers the sum).
struct QestReport {
  double ratio = 0;
  double coverage = 0;   // fraction of inventory mass processed
  double c = 0;          // echoed so callers can fit the c-power
  json details;
};
QestReport qest_check(const PacketDecomposition& d,
                      std::size_t tube_budget = 1200,
                      Exec exec = Exec::parallel);

// Mass redistribution: rows of m are target groups q0, columns follow
// d.tubes; every column must be nonnegative and sum to 1 (1e-12). Returns
// (sum_{q0} M(sum_T m_{q0,T} f_T))^{1/2} / M(f)^{1/2} - 1.
double mass_redistribution_check(const PacketDecomposition& d, const Mat& m,
                                 Exec exec = Exec::parallel);

// Commutator growth: K = max over probed tubes and times of
// || |x - x_T + t grad phi(xi_T)| f_T(t) ||_2 / (c^{-2} r ||f(0)||_2),
// with the per-time maxima reported (distances taken modulo the window).
struct CommutatorReport {
  double K = 0;
  std::vector<double> times;
  std::vector<double> ratios;  // per-time max ratio
};
CommutatorReport commutator_bound(const PacketDecomposition& d,
                                  const std::vector<double>& times,
                                  int probe_tubes = 12,
                                  Exec exec = Exec::parallel);

// Inventory CSV (x_T, xi_T, mass, spectral diameter of the cell's packets)
// plus a JSON sidecar echoing the parameters.
void write_packet_inventory(const PacketDecomposition& d,
                            const std::string& csv_path,
                            const std::string& sidecar_path);

}  // namespace bilin
