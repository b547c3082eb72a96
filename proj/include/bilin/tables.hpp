#pragma once

// Dyadic cube partitions, shrunken-interior masks, parent-cube averaging,
// packet-mass tables on cubes, cross-term norms, and the scale recursion.

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bilin/freewave.hpp"
#include "bilin/wavepacket.hpp"

namespace bilin {

// ---------------------------------------------------------------------------
// Cube partitions.

// The 2^{(n+1)*depth} children of a space-time cube, in lexicographic index
// order (spatial axes first, time last; the time axis is center(n)).
struct CubePartition {
  CubeRegion parent;
  int depth = 0;
  int per_axis = 1;                  // 2^depth
  std::vector<CubeRegion> children;  // size per_axis^{n+1}

  std::size_t size() const { return children.size(); }
  // Flatten a per-axis index vector (last axis fastest).
  std::size_t flatten(const std::vector<int>& idx) const;
};

CubePartition make_partition(const CubeRegion& Q, int depth);

// ---------------------------------------------------------------------------
// (c, depth) interior: union of the (1-c)-shrunken children, realized as a
// midpoint-lattice mask. A node passes when its cell intersects the shrunken
// child, so the measured complement never exceeds (n+1) c |Q|.
struct InteriorMask {
  CubeRegion Q;
  double c = 0.0;
  int depth = 0;
  int nodes_per_axis = 0;      // M midpoint nodes per axis
  std::vector<bool> inside;    // M^{n+1}, last axis fastest
  double covered_fraction = 0; // #inside / M^{n+1}

  // Pure geometric membership for an arbitrary space-time point.
  bool contains(const Vec& point) const;
};

InteriorMask interior(const CubeRegion& Q, double c, int depth,
                      int nodes_per_axis = 32);

// ---------------------------------------------------------------------------
// Parent-cube averaging: scan a lattice of side-2R cubes inside 4 Q_R and
// return the first whose (c,depth)-interior Lp norm controls the Q_R norm
// with constant 1 + c * 2^{n+2} (n+1).
struct ParentCubeReport {
  CubeRegion Q;           // selected cube, side 2R
  double achieved = 0;    // ||f||_{Lp(Q_R)} / ||f||_{Lp(I(Q))}
  double bound = 0;       // 1 + c C'
  json details;
};

ParentCubeReport select_parent_cube(const WaveState& f, const CubeRegion& QR,
                                    double c, int depth, double p = 2.0,
                                    int scan_per_axis = 16,
                                    int sample_res = 32,
                                    Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Tables: assign every packet of a wave to the children of a depth-C0
// partition with nonnegative coefficients summing to one per packet, the
// coefficient of (q, T) proportional to the companion wave's tube-localized
// mass in q.

struct Table {
  CubePartition partition;
  std::shared_ptr<const PacketDecomposition> d;  // decomposition of phi

  // Columns with explicit coefficient rows (all other lattice translates
  // carry the uniform column and are folded into the shared stream below).
  std::vector<Tube> tubes;
  // Per child q: (tube index, coefficient). Column sums over q are 1.
  std::vector<std::vector<std::pair<int, double>>> rows;

  std::vector<double> component_mass;  // per child
  double source_mass = 0.0;            // M(phi)
  double companion_mass = 0.0;         // M(psi)
  double total_mass = 0.0;             // M(Phi) = sum of component masses
  double identity_residual = 0.0;      // ||phi - sum_q Phi^{(q)}|| / ||phi||
  std::size_t lattice_columns = 0;     // full translate-lattice column count
  std::size_t degenerate_columns = 0;  // columns on the uniform fallback
  json params;

  // Spatial field (raw grid samples at the source time) of the summed
  // uniform-column packets; each component carries uniform_stream / #children.
  std::vector<cplx> uniform_stream;

  double mass_ratio() const { return total_mass / source_mass; }
  // Largest deviation of an explicit column sum from 1.
  double column_sum_deviation() const;
  // Synthesize one component as a wave state.
  WaveState component(std::size_t q, Exec exec = Exec::parallel) const;
};

// Build a table for phi on Q at localization c and partition depth C0.
// psi supplies the coefficient masses: m(q, T) integrates the tube cutoff
// (squared) against psi's per-cell energy density over q. Columns whose
// total is <= 1e-14 M(psi) fall back to the uniform distribution.
Table build_table(const WaveState& phi, const WaveState& psi,
                  const CubeRegion& Q, double c, int C0 = 4, int N = 10,
                  Exec exec = Exec::parallel);

// ||Phi^{(q1)} psi||_{L^2((1-c) q2)} / (M(phi)^{1/2} M(psi)^{1/2}) with q2
// shrunk toward its center. q1 == q2 is a usage error.
double cross_term_norm(const Table& table, const WaveState& psi,
                       std::size_t q1, std::size_t q2, double c,
                       int t_samples = 8, Exec exec = Exec::parallel);

// Summary CSV: one row per child (index, component mass, max coefficient,
// degenerate-column count).
void write_table_csv(const Table& table, const std::string& csv_path);

// ---------------------------------------------------------------------------
// Scale recursion A(2R) <= (1 + c C) A(R) + C_big c^{-C} (2R)^{e(p,n)} with
// e = (n+3)/2 (1/p - (n+1)/(n+3)) and c(R) = min(1/4, R^{e/(2C)}).
struct RecursionTrace {
  std::vector<double> R;
  std::vector<double> A;
  std::vector<double> c;
  double exponent = 0.0;  // e(p, n)
  double sup = 0.0;
  bool bounded = false;   // sup stayed below the blowup sentinel
};

constexpr double kRecursionSentinel = 1e6;

RecursionTrace iterate_recursion(double p, int n, double C, double C_big,
                                 double R0, double R_max);

// Same trace with the additive term forced to zero: A(R_K) is exactly the
// product of the (1 + c C) factors (cross-check for the iterator).
double recursion_product(const RecursionTrace& trace, double C);

// Trace CSV: (R, A, c).
void write_recursion_csv(const RecursionTrace& trace,
                         const std::string& csv_path);

}  // namespace bilin
