#pragma once
// Hypersurface geometry: graph surfaces tau = phi(xi), their normals and
// curvature, intersection curves of translated surface pairs, and the
// transversality / curvature certification checks with machine-checkable
// reports.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bilin/linalg.hpp"
#include "bilin/parallel.hpp"

namespace bilin {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Frequency-space domains.

enum class DomainKind { ball, box };

struct Domain {
  DomainKind kind = DomainKind::ball;
  Vec center;       // in R^n
  double radius = 0.0;  // ball radius
  Vec halves;       // box half-widths (per axis)

  static Domain make_ball(const Vec& c, double r);
  static Domain make_box(const Vec& c, const Vec& halves);

  int dim() const { return (int)center.size(); }
  bool contains(const Vec& x) const;
  // Distance to the complement; positive inside, negative outside.
  double dist_to_complement(const Vec& x) const;
  Domain inflate(double m) const;
  // Axis-aligned bounding box [lo, hi].
  void bounds(Vec& lo, Vec& hi) const;
  json to_json() const;
  static Domain from_json(const json& j, int n);
};

// ---------------------------------------------------------------------------
// Graph functions phi with derivatives. Derived classes provide exact
// derivatives where available; the base supplies central finite differences.

class PhiField {
public:
  explicit PhiField(int n) : n_(n) {}
  virtual ~PhiField() = default;
  int dim() const { return n_; }
  virtual double phi(const Vec& xi) const = 0;
  virtual void grad(const Vec& xi, Vec& g) const;   // FD fallback
  virtual void hess(const Vec& xi, Mat& h) const;   // FD fallback
  virtual bool exact_derivatives() const { return false; }

protected:
  int n_;
  double fd_step_ = 1e-5;  // central differences; squares to 1e-10 truncation
};

// A hypersurface piece: graph of phi over D, with the enlarged domain
// D~ = D inflated by `margin_gap` (support bookkeeping for waves lives there).
struct SurfaceSpec {
  std::string name;                       // catalog name or "custom"
  std::shared_ptr<const PhiField> field;
  Domain D;
  double margin_gap = 0.0;
  Domain D_tilde;                         // D inflated by margin_gap

  int n() const { return field->dim(); }
  double phi(const Vec& xi) const { return field->phi(xi); }
  Vec grad(const Vec& xi) const;
  Mat hess(const Vec& xi) const;
  Vec lift(const Vec& xi) const;          // (xi, phi(xi))
};

// Catalog factory. Supported names and parameters:
//   "elliptic-paraboloid"    phi = |xi|^2
//   "hyperbolic-paraboloid"  phi = xi_1^2 - xi_2^2 (n = 2)
//   "cone"                   phi = |xi|, domain must exclude 0
//   "generalized-cone"       phi = <eta, H eta> / rho, xi = (eta, rho);
//                            params: { "H": [[...]] } ((n-1)x(n-1), nonsingular)
//   "quadratic"              phi = sum c_k xi_k^2; params: { "coefficients": [...] }
//   "mixed-degree"           phi = xi_1^k + xi_2^2 + ... + xi_n^2; params: { "k": int >= 2 }
//   "graph"                  tabulated phi on a uniform grid (n = 2), cubic
//                            B-spline interpolation; params: { "lo": [..],
//                            "hi": [..], "dims": [..], "values": [... row-major] }
SurfaceSpec make_surface(const std::string& name, const json& params,
                         const Domain& D, double margin_gap);
std::vector<std::string> catalog_names();
// One-line parameter documentation per catalog entry.
std::vector<std::pair<std::string, std::string>> catalog_help();

// ---------------------------------------------------------------------------
// Pointwise geometry.

struct SurfacePoint {
  Vec xi;        // base point in R^n
  Vec pos;       // (xi, phi(xi)) in R^{n+1}
  Vec normal;    // unit upward normal (-grad phi, 1)/w
  Mat tangent;   // (n+1) x n orthonormal tangent basis (Gram-Schmidt on the
                 // graph frame (e_k, d_k phi))
};

SurfacePoint surface_point(const SurfaceSpec& S, const Vec& xi);

struct ShapeOperator {
  Mat matrix;              // n x n, symmetric, in the tangent basis
  Vec eigenvalues;         // descending
  Mat directions;          // (n+1) x n embedded principal directions
  double fd_consistency;   // max |matrix - FD Gauss-map differential|
};

// Exact Weingarten map cross-checked against a finite-difference Gauss map;
// trips a numeric error if the two disagree beyond `tol`.
ShapeOperator shape_operator(const SurfaceSpec& S, const Vec& xi,
                             double tol = 1e-5);

// Embeds a tangent-coordinate vector into R^{n+1} using the point's basis.
Vec embed_tangent(const SurfacePoint& P, const Vec& coeffs);

// Applies the shape operator to an embedded tangent vector, returning the
// embedded image (exact formula from grad/hess).
Vec shape_apply_embedded(const SurfaceSpec& S, const Vec& xi, const Vec& v_emb);

// ---------------------------------------------------------------------------
// Intersection curves: the first-surface slice of S1 cut by the h-translate
// of -S2, projected to xi-space as phi1(xi) + phi2(h0 - xi) = h_{n+1}.

struct CurveSample {
  Vec xi;             // on the projected curve, in D1
  Vec pos;            // lifted to S1
  Vec tangent_proj;   // unit tangent of the projected curve (R^n)
  Vec conormal_proj;  // unit normal of the projected curve (R^n)
  Vec tangent_emb;    // unit tangent of the lifted curve (R^{n+1})
  Vec conormal_emb;   // unit conormal within T S1 (R^{n+1})
};

struct IntersectionCurve {
  bool empty = true;
  Vec h;  // R^{n+1}
  std::vector<CurveSample> samples;
};

// Scan-and-polish level-set extraction (n = 2 only); residual tolerance is
// absolute on phi1(xi) + phi2(h0-xi) - h_{n+1}.
IntersectionCurve solve_intersection_curve(const SurfaceSpec& S1,
                                           const SurfaceSpec& S2, const Vec& h,
                                           int scan_res = 64,
                                           double tol = 1e-10);

// Default translation set: sums of lifted domain centers plus seeded jitter
// (the exact center sum is always the first element, so the curves are
// nonempty by construction and flat-pair degeneracies are not missed).
std::vector<Vec> default_h_samples(const SurfaceSpec& S1, const SurfaceSpec& S2,
                                   int count, unsigned long long seed);

// ---------------------------------------------------------------------------
// Certification reports.

struct ConditionReport {
  std::string condition;
  double infimum = 0.0;
  double threshold = 0.0;
  bool pass = false;
  long long samples = 0;
  json witness;   // enough data to re-evaluate the infimum
  json details;   // extra per-condition info (sub-infima, warnings)
  json to_json() const;
};

struct ConditionOptions {
  double theta = 0.1;        // acceptance threshold
  int surface_res = 24;      // per-axis sample resolution on each domain
  int curve_scan = 64;       // level-set scan resolution
  int h_count = 9;           // translation samples (incl. the center sum)
  unsigned long long seed = 20260816ull;
  double nvar_bound = 0.2;   // normal-variation smallness bound
  Exec exec = Exec::parallel;
};

// Pairwise normal transversality |N1 ^ N2| over both domains.
ConditionReport check_C1(const SurfaceSpec& S1, const SurfaceSpec& S2,
                         const ConditionOptions& opt);

// Normal-variation transversality along intersection curves, reported as a
// (global, local) pair: global variant vol(N_i(z1)-N_i(z2), N1(~z1), N2(~z2))
// / |z1-z2| over curve point pairs and surface samples; local variant
// |S_{N_i} v ^ n| with v, n embedded in R^{n+1}. Both sides i = 1, 2 are
// scanned and the minimum reported. Empty curves are skipped and counted;
// all-empty trips an inconclusive numeric error.
std::pair<ConditionReport, ConditionReport> check_C2(
    const SurfaceSpec& S1, const SurfaceSpec& S2,
    const std::vector<Vec>& h_samples, const ConditionOptions& opt);

// Curvature of intersection curves: |II(v,v)| for unit curve tangents.
ConditionReport check_C3(const SurfaceSpec& S1, const SurfaceSpec& S2,
                         const std::vector<Vec>& h_samples,
                         const ConditionOptions& opt);

// Graph-coordinate variant |Hphi1 v ^ n| on the projected curve.
ConditionReport check_C3bb(const SurfaceSpec& S1, const SurfaceSpec& S2,
                           const std::vector<Vec>& h_samples,
                           const ConditionOptions& opt);

// Inverse-Hessian nondegeneracy |<Hphi_i^{-1} n, n>| on the projected curve.
// Curve samples with |det Hphi| < 1e-8 mark the report not-applicable
// (details flag) instead of erroring; the infimum then covers the
// nonsingular samples only.
ConditionReport check_CLee(const SurfaceSpec& S1, const SurfaceSpec& S2,
                           const std::vector<Vec>& h_samples,
                           const ConditionOptions& opt);

// Convenience bundle evaluating both graph-coordinate variants in one pass
// over the same curves.
std::pair<ConditionReport, ConditionReport> check_C3bb_and_CLee(
    const SurfaceSpec& S1, const SurfaceSpec& S2,
    const std::vector<Vec>& h_samples, const ConditionOptions& opt);

// Second-surface normals vs. the tangent planes of the normal cone of the
// intersection curve: infimum of the sine of the incidence angle.
ConditionReport check_LFW(const SurfaceSpec& S1, const SurfaceSpec& S2,
                          const std::vector<Vec>& h_samples,
                          const ConditionOptions& opt);

// Single-sample functional values (used for witness re-evaluation in tests).
double c1_value(const SurfaceSpec& S1, const SurfaceSpec& S2, const Vec& xi1,
                const Vec& xi2);
double c2_global_value(const SurfaceSpec& Si, const SurfaceSpec& S1,
                       const SurfaceSpec& S2, const Vec& xi_a, const Vec& xi_b,
                       const Vec& xi_t1, const Vec& xi_t2);

// ---------------------------------------------------------------------------
// Normal cone sampling (input to the energy module).

struct ConePoint {
  Vec pos;        // alpha * N1(zeta) in R^{n+1}
  Vec unit_ray;   // N1(zeta)
  Vec face_normal;  // unit normal of the cone surface at pos
  double alpha;
};

struct ConeCloud {
  std::vector<ConePoint> points;
  double patch_radius = 0.0;  // local sample spacing bound
};

// Rays through the lifted curve normals, alphas excluding an apex ball.
ConeCloud normal_cone_samples(const SurfaceSpec& S1,
                              const IntersectionCurve& curve,
                              const std::vector<double>& alphas);

// Same, solving the intersection curve for the translate h internally.
ConeCloud normal_cone_samples(const SurfaceSpec& S1, const SurfaceSpec& S2,
                              const Vec& h, const std::vector<double>& alphas,
                              int scan_res = 64);

}  // namespace bilin
