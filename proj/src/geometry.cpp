#include "bilin/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bilin/parallel.hpp"

namespace bilin {

// ---------------------------------------------------------------------------
// Domain

Domain Domain::make_ball(const Vec& c, double r) {
  require(r > 0.0, ErrorKind::validation, "domain: ball radius must be > 0");
  Domain d;
  d.kind = DomainKind::ball;
  d.center = c;
  d.radius = r;
  return d;
}

Domain Domain::make_box(const Vec& c, const Vec& halves) {
  require(c.size() == halves.size(), ErrorKind::validation,
          "domain: box center/halves dimension mismatch");
  require(halves.minCoeff() > 0.0, ErrorKind::validation,
          "domain: box half-widths must be > 0");
  Domain d;
  d.kind = DomainKind::box;
  d.center = c;
  d.halves = halves;
  return d;
}

bool Domain::contains(const Vec& x) const {
  return dist_to_complement(x) >= 0.0;
}

double Domain::dist_to_complement(const Vec& x) const {
  if (kind == DomainKind::ball) return radius - (x - center).norm();
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < dim(); ++i)
    m = std::min(m, halves(i) - std::abs(x(i) - center(i)));
  return m;
}

Domain Domain::inflate(double m) const {
  Domain d = *this;
  if (kind == DomainKind::ball)
    d.radius += m;
  else
    d.halves = halves.array() + m;
  return d;
}

void Domain::bounds(Vec& lo, Vec& hi) const {
  if (kind == DomainKind::ball) {
    lo = center.array() - radius;
    hi = center.array() + radius;
  } else {
    lo = center - halves;
    hi = center + halves;
  }
}

json Domain::to_json() const {
  json j;
  j["kind"] = kind == DomainKind::ball ? "ball" : "box";
  j["center"] = std::vector<double>(center.data(), center.data() + center.size());
  if (kind == DomainKind::ball)
    j["radius"] = radius;
  else
    j["halves"] = std::vector<double>(halves.data(), halves.data() + halves.size());
  return j;
}

Domain Domain::from_json(const json& j, int n) {
  require(j.contains("kind") && j.contains("center"), ErrorKind::validation,
          "domain: missing 'kind' or 'center'");
  const std::string kind = j.at("kind").get<std::string>();
  auto cv = j.at("center").get<std::vector<double>>();
  require((int)cv.size() == n, ErrorKind::validation,
          "domain: center dimension != n");
  Vec c = Eigen::Map<Vec>(cv.data(), (Eigen::Index)cv.size());
  if (kind == "ball") {
    require(j.contains("radius"), ErrorKind::validation, "domain: missing 'radius'");
    return make_ball(c, j.at("radius").get<double>());
  }
  if (kind == "box") {
    require(j.contains("halves"), ErrorKind::validation, "domain: missing 'halves'");
    auto hv = j.at("halves").get<std::vector<double>>();
    require((int)hv.size() == n, ErrorKind::validation,
            "domain: halves dimension != n");
    return make_box(c, Eigen::Map<Vec>(hv.data(), (Eigen::Index)hv.size()));
  }
  fail_validation("domain: unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// PhiField finite-difference fallbacks.

void PhiField::grad(const Vec& xi, Vec& g) const {
  g.resize(n_);
  const double h = fd_step_ * std::max(1.0, xi.norm());
  Vec p = xi;
  for (int i = 0; i < n_; ++i) {
    p(i) = xi(i) + h;
    const double fp = phi(p);
    p(i) = xi(i) - h;
    const double fm = phi(p);
    p(i) = xi(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
}

void PhiField::hess(const Vec& xi, Mat& H) const {
  H.resize(n_, n_);
  const double h = 1e-4 * std::max(1.0, xi.norm());
  const double f0 = phi(xi);
  Vec p = xi;
  for (int i = 0; i < n_; ++i) {
    p(i) = xi(i) + h;
    const double fp = phi(p);
    p(i) = xi(i) - h;
    const double fm = phi(p);
    p(i) = xi(i);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (int j = i + 1; j < n_; ++j) {
      p(i) = xi(i) + h;
      p(j) = xi(j) + h;
      const double fpp = phi(p);
      p(j) = xi(j) - h;
      const double fpm = phi(p);
      p(i) = xi(i) - h;
      const double fmm = phi(p);
      p(j) = xi(j) + h;
      const double fmp = phi(p);
      p(i) = xi(i);
      p(j) = xi(j);
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
    }
  }
}

Vec SurfaceSpec::grad(const Vec& xi) const {
  Vec g;
  field->grad(xi, g);
  return g;
}

Mat SurfaceSpec::hess(const Vec& xi) const {
  Mat H;
  field->hess(xi, H);
  return H;
}

Vec SurfaceSpec::lift(const Vec& xi) const {
  Vec p(n() + 1);
  p.head(n()) = xi;
  p(n()) = phi(xi);
  return p;
}

// ---------------------------------------------------------------------------
// Catalog fields.

namespace {

class Paraboloid final : public PhiField {
public:
  explicit Paraboloid(int n) : PhiField(n) {}
  double phi(const Vec& xi) const override { return xi.squaredNorm(); }
  void grad(const Vec& xi, Vec& g) const override { g = 2.0 * xi; }
  void hess(const Vec&, Mat& H) const override {
    H = 2.0 * Mat::Identity(n_, n_);
  }
  bool exact_derivatives() const override { return true; }
};

class HyperbolicParaboloid final : public PhiField {
public:
  explicit HyperbolicParaboloid(int n) : PhiField(n) {
    require(n == 2, ErrorKind::validation, "hyperbolic-paraboloid: n must be 2");
  }
  double phi(const Vec& xi) const override {
    return xi(0) * xi(0) - xi(1) * xi(1);
  }
  void grad(const Vec& xi, Vec& g) const override {
    g.resize(2);
    g(0) = 2.0 * xi(0);
    g(1) = -2.0 * xi(1);
  }
  void hess(const Vec&, Mat& H) const override {
    H.resize(2, 2);
    H << 2.0, 0.0, 0.0, -2.0;
  }
  bool exact_derivatives() const override { return true; }
};

class ConeField final : public PhiField {
public:
  explicit ConeField(int n) : PhiField(n) {}
  double phi(const Vec& xi) const override { return xi.norm(); }
  void grad(const Vec& xi, Vec& g) const override {
    const double r = xi.norm();
    require(r > 1e-14, ErrorKind::numeric, "cone: gradient at the apex");
    g = xi / r;
  }
  void hess(const Vec& xi, Mat& H) const override {
    const double r = xi.norm();
    require(r > 1e-14, ErrorKind::numeric, "cone: curvature at the apex");
    const Vec u = xi / r;
    H = (Mat::Identity(n_, n_) - u * u.transpose()) / r;
  }
  bool exact_derivatives() const override { return true; }
};

class GeneralizedCone final : public PhiField {
public:
  GeneralizedCone(int n, const Mat& H) : PhiField(n), H_(H) {
    require(n >= 2, ErrorKind::validation, "generalized-cone: n must be >= 2");
    require(H.rows() == n - 1 && H.cols() == n - 1, ErrorKind::validation,
            "generalized-cone: H must be (n-1)x(n-1)");
    H_ = 0.5 * (H + H.transpose());
    require(std::abs(H_.determinant()) > 1e-12, ErrorKind::validation,
            "generalized-cone: H must be nonsingular");
  }
  double phi(const Vec& xi) const override {
    const Vec eta = xi.head(n_ - 1);
    return eta.dot(H_ * eta) / xi(n_ - 1);
  }
  void grad(const Vec& xi, Vec& g) const override {
    const Vec eta = xi.head(n_ - 1);
    const double rho = xi(n_ - 1);
    g.resize(n_);
    g.head(n_ - 1) = 2.0 * (H_ * eta) / rho;
    g(n_ - 1) = -eta.dot(H_ * eta) / (rho * rho);
  }
  void hess(const Vec& xi, Mat& H) const override {
    const Vec eta = xi.head(n_ - 1);
    const double rho = xi(n_ - 1);
    H.resize(n_, n_);
    H.topLeftCorner(n_ - 1, n_ - 1) = 2.0 * H_ / rho;
    const Vec mixed = -2.0 * (H_ * eta) / (rho * rho);
    H.topRightCorner(n_ - 1, 1) = mixed;
    H.bottomLeftCorner(1, n_ - 1) = mixed.transpose();
    H(n_ - 1, n_ - 1) = 2.0 * eta.dot(H_ * eta) / (rho * rho * rho);
  }
  bool exact_derivatives() const override { return true; }

private:
  Mat H_;
};

class Quadratic final : public PhiField {
public:
  Quadratic(int n, const Vec& coeffs) : PhiField(n), c_(coeffs) {
    require((int)c_.size() == n, ErrorKind::validation,
            "quadratic: need n coefficients");
  }
  double phi(const Vec& xi) const override {
    return (c_.array() * xi.array().square()).sum();
  }
  void grad(const Vec& xi, Vec& g) const override {
    g = 2.0 * c_.array() * xi.array();
  }
  void hess(const Vec&, Mat& H) const override {
    H = (2.0 * c_).asDiagonal();
  }
  bool exact_derivatives() const override { return true; }

private:
  Vec c_;
};

class MixedDegree final : public PhiField {
public:
  MixedDegree(int n, int k) : PhiField(n), k_(k) {
    require(k >= 2, ErrorKind::validation, "mixed-degree: k must be >= 2");
  }
  double phi(const Vec& xi) const override {
    double s = std::pow(xi(0), k_);
    for (int i = 1; i < n_; ++i) s += xi(i) * xi(i);
    return s;
  }
  void grad(const Vec& xi, Vec& g) const override {
    g.resize(n_);
    g(0) = k_ * std::pow(xi(0), k_ - 1);
    for (int i = 1; i < n_; ++i) g(i) = 2.0 * xi(i);
  }
  void hess(const Vec& xi, Mat& H) const override {
    H = Mat::Zero(n_, n_);
    H(0, 0) = (double)k_ * (k_ - 1) * std::pow(xi(0), k_ - 2);
    for (int i = 1; i < n_; ++i) H(i, i) = 2.0;
  }
  bool exact_derivatives() const override { return true; }

private:
  int k_;
};

// Tabulated graph with cubic B-spline interpolation (C^2), n = 2.
class GraphField final : public PhiField {
public:
  GraphField(const Vec& lo, const Vec& hi, const std::vector<int>& dims,
             std::vector<double> values)
      : PhiField(2), lo_(lo), hi_(hi), nx_(dims[0]), ny_(dims[1]) {
    require(nx_ >= 8 && ny_ >= 8, ErrorKind::validation,
            "graph: need at least 8 samples per axis");
    require((int)values.size() == nx_ * ny_, ErrorKind::validation,
            "graph: values size != dims product");
    hx_ = (hi_(0) - lo_(0)) / (nx_ - 1);
    hy_ = (hi_(1) - lo_(1)) / (ny_ - 1);
    require(hx_ > 0 && hy_ > 0, ErrorKind::validation, "graph: empty extent");
    coef_ = std::move(values);
    // Prefilter rows then columns so that B-spline evaluation interpolates
    // the tabulated samples exactly.
    std::vector<double> line(std::max(nx_, ny_));
    for (int iy = 0; iy < ny_; ++iy) {
      for (int ix = 0; ix < nx_; ++ix) line[ix] = coef_[ix * ny_ + iy];
      prefilter(line.data(), nx_);
      for (int ix = 0; ix < nx_; ++ix) coef_[ix * ny_ + iy] = line[ix];
    }
    for (int ix = 0; ix < nx_; ++ix) {
      prefilter(coef_.data() + ix * ny_, ny_);
    }
  }

  double phi(const Vec& xi) const override {
    const double u = (xi(0) - lo_(0)) / hx_;
    const double v = (xi(1) - lo_(1)) / hy_;
    require(u >= 1.0 && u <= nx_ - 2.0 && v >= 1.0 && v <= ny_ - 2.0,
            ErrorKind::numeric, "graph: query outside the tabulated interior");
    const int iu = std::min((int)std::floor(u), nx_ - 3);
    const int iv = std::min((int)std::floor(v), ny_ - 3);
    double wu[4], wv[4];
    weights(u - iu, wu);
    weights(v - iv, wv);
    double s = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        s += wu[a] * wv[b] * coef_[(iu - 1 + a) * ny_ + (iv - 1 + b)];
    return s;
  }

private:
  static void prefilter(double* c, int n) {
    // Single-pole recursive filter; mirror boundaries.
    const double z = std::sqrt(3.0) - 2.0;
    const double gain = (1.0 - z) * (1.0 - 1.0 / z);
    for (int i = 0; i < n; ++i) c[i] *= gain;
    double sum = c[0];
    double zk = z;
    const int horizon = std::min(n, 40);
    for (int k = 1; k < horizon; ++k) {
      sum += zk * c[k];
      zk *= z;
    }
    c[0] = sum;
    for (int i = 1; i < n; ++i) c[i] += z * c[i - 1];
    c[n - 1] = (z / (z * z - 1.0)) * (c[n - 1] + z * c[n - 2]);
    for (int i = n - 2; i >= 0; --i) c[i] = z * (c[i + 1] - c[i]);
  }
  // Cubic B-spline basis weights at fractional offset t in [0,1).
  static void weights(double t, double* w) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
    w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
    w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
    w[3] = t3 / 6.0;
  }

  Vec lo_, hi_;
  int nx_, ny_;
  double hx_ = 0, hy_ = 0;
  std::vector<double> coef_;
};

Vec json_vec(const json& j, const char* key, int expect) {
  require(j.contains(key), ErrorKind::validation,
          std::string("surface params: missing '") + key + "'");
  auto v = j.at(key).get<std::vector<double>>();
  require(expect < 0 || (int)v.size() == expect, ErrorKind::validation,
          std::string("surface params: '") + key + "' has wrong length");
  return Eigen::Map<Vec>(v.data(), (Eigen::Index)v.size());
}

}  // namespace

SurfaceSpec make_surface(const std::string& name, const json& params,
                         const Domain& D, double margin_gap) {
  const int n = D.dim();
  require(n >= 1, ErrorKind::validation, "surface: domain dimension must be >= 1");
  require(margin_gap > 0.0, ErrorKind::validation,
          "surface: margin gap must be > 0");
  SurfaceSpec S;
  S.name = name;
  S.D = D;
  S.margin_gap = margin_gap;
  S.D_tilde = D.inflate(margin_gap);

  if (name == "elliptic-paraboloid") {
    S.field = std::make_shared<Paraboloid>(n);
  } else if (name == "hyperbolic-paraboloid") {
    S.field = std::make_shared<HyperbolicParaboloid>(n);
  } else if (name == "cone") {
    S.field = std::make_shared<ConeField>(n);
    require(S.D_tilde.dist_to_complement(Vec::Zero(n)) < 0.0,
            ErrorKind::validation, "cone: enlarged domain must exclude the apex");
  } else if (name == "generalized-cone") {
    require(params.contains("H"), ErrorKind::validation,
            "generalized-cone: missing parameter 'H'");
    auto rows = params.at("H").get<std::vector<std::vector<double>>>();
    require((int)rows.size() == n - 1, ErrorKind::validation,
            "generalized-cone: H must be (n-1)x(n-1)");
    Mat H(n - 1, n - 1);
    for (int i = 0; i < n - 1; ++i) {
      require((int)rows[i].size() == n - 1, ErrorKind::validation,
              "generalized-cone: H must be (n-1)x(n-1)");
      for (int j = 0; j < n - 1; ++j) H(i, j) = rows[i][j];
    }
    S.field = std::make_shared<GeneralizedCone>(n, H);
    Vec lo, hi;
    S.D_tilde.bounds(lo, hi);
    require(lo(n - 1) > 0.0 || hi(n - 1) < 0.0, ErrorKind::validation,
            "generalized-cone: enlarged domain must exclude rho = 0");
  } else if (name == "quadratic") {
    S.field = std::make_shared<Quadratic>(n, json_vec(params, "coefficients", n));
  } else if (name == "mixed-degree") {
    require(params.contains("k"), ErrorKind::validation,
            "mixed-degree: missing parameter 'k'");
    S.field = std::make_shared<MixedDegree>(n, params.at("k").get<int>());
  } else if (name == "graph") {
    require(n == 2, ErrorKind::validation, "graph: implemented for n = 2");
    require(params.contains("dims") && params.contains("values"),
            ErrorKind::validation, "graph: missing 'dims' or 'values'");
    const Vec lo = json_vec(params, "lo", 2);
    const Vec hi = json_vec(params, "hi", 2);
    auto dims = params.at("dims").get<std::vector<int>>();
    require(dims.size() == 2, ErrorKind::validation, "graph: dims must have 2 entries");
    auto vals = params.at("values").get<std::vector<double>>();
    S.field = std::make_shared<GraphField>(lo, hi, dims, std::move(vals));
    // Queries must stay 2 knot cells inside the table.
    Vec dlo, dhi;
    S.D_tilde.bounds(dlo, dhi);
    const double hx = (hi(0) - lo(0)) / (dims[0] - 1);
    const double hy = (hi(1) - lo(1)) / (dims[1] - 1);
    require(dlo(0) >= lo(0) + 2 * hx && dhi(0) <= hi(0) - 2 * hx &&
                dlo(1) >= lo(1) + 2 * hy && dhi(1) <= hi(1) - 2 * hy,
            ErrorKind::validation,
            "graph: enlarged domain must sit 2 cells inside the table");
  } else {
    fail_validation("surface: unknown catalog name '" + name + "'");
  }
  return S;
}

std::vector<std::string> catalog_names() {
  return {"elliptic-paraboloid", "hyperbolic-paraboloid", "cone",
          "generalized-cone",    "quadratic",             "mixed-degree",
          "graph"};
}

std::vector<std::pair<std::string, std::string>> catalog_help() {
  return {
      {"elliptic-paraboloid", "phi = |xi|^2 (no parameters)"},
      {"hyperbolic-paraboloid", "phi = xi1^2 - xi2^2, n = 2 (no parameters)"},
      {"cone", "phi = |xi|; enlarged domain must exclude the apex"},
      {"generalized-cone",
       "phi = <eta,H eta>/rho, xi=(eta,rho); params: H ((n-1)x(n-1), nonsingular); "
       "enlarged domain must exclude rho=0"},
      {"quadratic", "phi = sum c_k xi_k^2; params: coefficients (n values)"},
      {"mixed-degree", "phi = xi1^k + xi2^2 + ... ; params: k (integer >= 2)"},
      {"graph",
       "tabulated phi, cubic B-spline interpolation, n = 2; params: lo, hi, "
       "dims, values (row-major)"},
  };
}

// ---------------------------------------------------------------------------
// Pointwise geometry.

SurfacePoint surface_point(const SurfaceSpec& S, const Vec& xi) {
  const int n = S.n();
  SurfacePoint P;
  P.xi = xi;
  P.pos = S.lift(xi);
  const Vec g = S.grad(xi);
  const double w = std::sqrt(1.0 + g.squaredNorm());
  P.normal.resize(n + 1);
  P.normal.head(n) = -g / w;
  P.normal(n) = 1.0 / w;
  Mat V = Mat::Zero(n + 1, n);
  for (int k = 0; k < n; ++k) {
    V(k, k) = 1.0;
    V(n, k) = g(k);
  }
  P.tangent = orthonormalize(V);
  return P;
}

Vec embed_tangent(const SurfacePoint& P, const Vec& coeffs) {
  return P.tangent * coeffs;
}

Vec shape_apply_embedded(const SurfaceSpec& S, const Vec& xi, const Vec& v_emb) {
  const int n = S.n();
  const Vec g = S.grad(xi);
  const Mat H = S.hess(xi);
  const double w = std::sqrt(1.0 + g.squaredNorm());
  const Vec p = v_emb.head(n);
  const Vec Hp = H * p;
  Vec out = Vec::Zero(n + 1);
  out.head(n) = Hp / w;
  Vec N(n + 1);
  N.head(n) = -g / w;
  N(n) = 1.0 / w;
  out += N * (g.dot(Hp) / (w * w));
  return out;
}

namespace {

// Unit normal at xi (helper avoiding the tangent-frame construction).
Vec unit_normal(const SurfaceSpec& S, const Vec& xi) {
  const int n = S.n();
  const Vec g = S.grad(xi);
  const double w = std::sqrt(1.0 + g.squaredNorm());
  Vec N(n + 1);
  N.head(n) = -g / w;
  N(n) = 1.0 / w;
  return N;
}

Vec cross3(const Vec& a, const Vec& b) {
  Vec c(3);
  c(0) = a(1) * b(2) - a(2) * b(1);
  c(1) = a(2) * b(0) - a(0) * b(2);
  c(2) = a(0) * b(1) - a(1) * b(0);
  return c;
}

}  // namespace

ShapeOperator shape_operator(const SurfaceSpec& S, const Vec& xi, double tol) {
  const int n = S.n();
  const SurfacePoint P = surface_point(S, xi);
  ShapeOperator op;
  op.matrix.resize(n, n);
  for (int j = 0; j < n; ++j) {
    const Vec Sv = shape_apply_embedded(S, xi, P.tangent.col(j));
    for (int i = 0; i < n; ++i) op.matrix(i, j) = Sv.dot(P.tangent.col(i));
  }
  // Finite-difference Gauss map along the projected basis curves.
  const double h = 1e-4 * std::max(1.0, xi.norm());
  double worst = 0.0;
  for (int j = 0; j < n; ++j) {
    const Vec pj = P.tangent.col(j).head(n);
    const Vec Np = unit_normal(S, xi + h * pj);
    const Vec Nm = unit_normal(S, xi - h * pj);
    const Vec dN = (Np - Nm) / (2.0 * h);
    for (int i = 0; i < n; ++i) {
      const double fd = -dN.dot(P.tangent.col(i));
      worst = std::max(worst, std::abs(fd - op.matrix(i, j)));
    }
  }
  op.fd_consistency = worst;
  require(worst <= tol, ErrorKind::numeric,
          "shape_operator: analytic/finite-difference mismatch " +
              std::to_string(worst));
  const Mat sym = 0.5 * (op.matrix + op.matrix.transpose());
  require((op.matrix - sym).cwiseAbs().maxCoeff() <= 1e-8 * (1.0 + sym.norm()),
          ErrorKind::numeric, "shape_operator: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  require(es.info() == Eigen::Success, ErrorKind::numeric,
          "shape_operator: eigensolve failed");
  // Descending order.
  op.eigenvalues = es.eigenvalues().reverse();
  op.directions.resize(n + 1, n);
  for (int j = 0; j < n; ++j)
    op.directions.col(j) = P.tangent * es.eigenvectors().col(n - 1 - j);
  return op;
}

// ---------------------------------------------------------------------------
// Intersection curves.

IntersectionCurve solve_intersection_curve(const SurfaceSpec& S1,
                                           const SurfaceSpec& S2, const Vec& h,
                                           int scan_res, double tol) {
  const int n = S1.n();
  require(n == 2, ErrorKind::validation,
          "solve_intersection_curve: implemented for n = 2");
  require((int)h.size() == n + 1, ErrorKind::validation,
          "solve_intersection_curve: h must be in R^{n+1}");
  require(scan_res >= 8, ErrorKind::validation,
          "solve_intersection_curve: scan resolution too small");

  IntersectionCurve curve;
  curve.h = h;
  const Vec h0 = h.head(n);
  const double h_last = h(n);

  auto valid = [&](const Vec& xi) {
    return S1.D.contains(xi) && S2.D.contains(h0 - xi);
  };
  auto F = [&](const Vec& xi) {
    return S1.phi(xi) + S2.phi(h0 - xi) - h_last;
  };
  auto gradF = [&](const Vec& xi) {
    return Vec(S1.grad(xi) - S2.grad(h0 - xi));
  };

  // Scan box: D1's box intersected with the reflected translate of D2's box.
  Vec lo1, hi1, lo2, hi2;
  S1.D.bounds(lo1, hi1);
  S2.D.bounds(lo2, hi2);
  Vec lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    lo(i) = std::max(lo1(i), h0(i) - hi2(i));
    hi(i) = std::min(hi1(i), h0(i) - lo2(i));
    if (lo(i) >= hi(i)) return curve;  // empty overlap
  }

  const int m = scan_res;
  std::vector<double> val((m + 1) * (m + 1));
  std::vector<char> ok((m + 1) * (m + 1));
  auto node = [&](int i, int j) {
    Vec p(2);
    p(0) = lo(0) + (hi(0) - lo(0)) * i / m;
    p(1) = lo(1) + (hi(1) - lo(1)) * j / m;
    return p;
  };
  for (int i = 0; i <= m; ++i)
    for (int j = 0; j <= m; ++j) {
      const Vec p = node(i, j);
      const bool v = valid(p);
      ok[i * (m + 1) + j] = v;
      val[i * (m + 1) + j] = v ? F(p) : 0.0;
    }

  const double cell = std::max((hi(0) - lo(0)) / m, (hi(1) - lo(1)) / m);
  std::vector<Vec> roots;
  auto bisect_edge = [&](Vec a, Vec b, double fa) {
    for (int it = 0; it < 60; ++it) {
      const Vec mid = 0.5 * (a + b);
      const double fm = F(mid);
      if ((fm < 0) == (fa < 0)) {
        a = mid;
        fa = fm;
      } else {
        b = mid;
      }
    }
    return Vec(0.5 * (a + b));
  };

  for (int i = 0; i <= m; ++i)
    for (int j = 0; j <= m; ++j) {
      const int id = i * (m + 1) + j;
      if (!ok[id]) continue;
      if (val[id] == 0.0) roots.push_back(node(i, j));
      // Edge to (i+1, j) and (i, j+1).
      for (int dir = 0; dir < 2; ++dir) {
        const int i2 = i + (dir == 0 ? 1 : 0);
        const int j2 = j + (dir == 0 ? 0 : 1);
        if (i2 > m || j2 > m) continue;
        const int id2 = i2 * (m + 1) + j2;
        if (!ok[id2]) continue;
        const double fa = val[id], fb = val[id2];
        if (fa == 0.0 || fb == 0.0 || (fa < 0) == (fb < 0)) continue;
        roots.push_back(bisect_edge(node(i, j), node(i2, j2), fa));
      }
    }

  // Newton polish and filtering.
  const double f_tol = tol * (1.0 + std::abs(h_last));
  std::vector<Vec> polished;
  for (Vec xi : roots) {
    bool good = false;
    for (int it = 0; it < 40; ++it) {
      const double f = F(xi);
      if (std::abs(f) <= f_tol) {
        good = true;
        break;
      }
      const Vec g = gradF(xi);
      const double g2 = g.squaredNorm();
      if (g2 < 1e-24) break;
      xi -= (f / g2) * g;
    }
    if (good && valid(xi)) polished.push_back(xi);
  }
  // Dedupe within a quarter cell.
  std::sort(polished.begin(), polished.end(), [](const Vec& a, const Vec& b) {
    return a(0) != b(0) ? a(0) < b(0) : a(1) < b(1);
  });
  std::vector<Vec> unique_pts;
  for (const Vec& p : polished) {
    bool dup = false;
    for (const Vec& q : unique_pts)
      if ((p - q).norm() < 0.25 * cell) {
        dup = true;
        break;
      }
    if (!dup) unique_pts.push_back(p);
  }
  if (unique_pts.empty()) return curve;

  curve.empty = false;
  for (const Vec& xi : unique_pts) {
    CurveSample s;
    s.xi = xi;
    s.pos = S1.lift(xi);
    const Vec g = gradF(xi);
    const double gn = g.norm();
    if (gn < 1e-12) continue;  // degenerate projected point, skip
    s.conormal_proj = g / gn;
    s.tangent_proj.resize(2);
    s.tangent_proj(0) = -s.conormal_proj(1);
    s.tangent_proj(1) = s.conormal_proj(0);
    const Vec g1 = S1.grad(xi);
    Vec t_emb(3);
    t_emb.head(2) = s.tangent_proj;
    t_emb(2) = g1.dot(s.tangent_proj);
    s.tangent_emb = t_emb / t_emb.norm();
    Vec c_emb(3);
    c_emb.head(2) = s.conormal_proj;
    c_emb(2) = g1.dot(s.conormal_proj);
    c_emb -= c_emb.dot(s.tangent_emb) * s.tangent_emb;
    const double cn = c_emb.norm();
    if (cn < 1e-12) continue;
    s.conormal_emb = c_emb / cn;
    curve.samples.push_back(std::move(s));
  }
  curve.empty = curve.samples.empty();
  return curve;
}

std::vector<Vec> default_h_samples(const SurfaceSpec& S1, const SurfaceSpec& S2,
                                   int count, unsigned long long seed) {
  require(count >= 1, ErrorKind::validation, "default_h_samples: count >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int n = S1.n();
  auto radius_of = [](const Domain& D) {
    if (D.kind == DomainKind::ball) return D.radius;
    return D.halves.minCoeff();
  };
  std::vector<Vec> hs;
  hs.push_back(Vec(S1.lift(S1.D.center) + S2.lift(S2.D.center)));
  while ((int)hs.size() < count) {
    Vec a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = S1.D.center(i) + 0.5 * radius_of(S1.D) * unit(rng);
      b(i) = S2.D.center(i) + 0.5 * radius_of(S2.D) * unit(rng);
    }
    if (!S1.D.contains(a) || !S2.D.contains(b)) continue;
    hs.push_back(Vec(S1.lift(a) + S2.lift(b)));
  }
  return hs;
}

// ---------------------------------------------------------------------------
// Condition checks.

namespace {

std::vector<Vec> domain_grid(const Domain& D, int res) {
  Vec lo, hi;
  D.bounds(lo, hi);
  const int n = D.dim();
  std::vector<Vec> pts;
  std::vector<int> idx(n, 0);
  for (;;) {
    Vec p(n);
    for (int i = 0; i < n; ++i)
      p(i) = lo(i) + (hi(i) - lo(i)) * (idx[i] + 0.5) / res;
    if (D.contains(p)) pts.push_back(p);
    int a = 0;
    while (a < n && ++idx[a] == res) idx[a++] = 0;
    if (a == n) break;
  }
  require(!pts.empty(), ErrorKind::numeric, "domain sampling produced no points");
  return pts;
}

json vec_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

struct CurveSet {
  // Curves for both sides over all h samples: side 0 lives on S1, side 1 on S2.
  std::vector<IntersectionCurve> per_h[2];
};

CurveSet solve_all_curves(const SurfaceSpec& S1, const SurfaceSpec& S2,
                          const std::vector<Vec>& h_samples,
                          const ConditionOptions& opt) {
  CurveSet cs;
  for (const Vec& h : h_samples) {
    cs.per_h[0].push_back(solve_intersection_curve(S1, S2, h, opt.curve_scan));
    cs.per_h[1].push_back(solve_intersection_curve(S2, S1, h, opt.curve_scan));
  }
  return cs;
}

}  // namespace

json ConditionReport::to_json() const {
  json j;
  j["condition"] = condition;
  j["infimum"] = infimum;
  j["threshold"] = threshold;
  j["verdict"] = pass ? "pass" : "fail";
  j["witness"] = witness;
  j["samples"] = samples;
  if (!details.is_null()) j["details"] = details;
  return j;
}

double c1_value(const SurfaceSpec& S1, const SurfaceSpec& S2, const Vec& xi1,
                const Vec& xi2) {
  return wedge_area(unit_normal(S1, xi1), unit_normal(S2, xi2));
}

double c2_global_value(const SurfaceSpec& Si, const SurfaceSpec& S1,
                       const SurfaceSpec& S2, const Vec& xi_a, const Vec& xi_b,
                       const Vec& xi_t1, const Vec& xi_t2) {
  const Vec w = unit_normal(Si, xi_a) - unit_normal(Si, xi_b);
  const double sep = (Si.lift(xi_a) - Si.lift(xi_b)).norm();
  require(sep > 1e-14, ErrorKind::validation, "c2_global_value: coincident pair");
  std::vector<Vec> span = {w, unit_normal(S1, xi_t1), unit_normal(S2, xi_t2)};
  return parallelepiped_volume(span) / sep;
}

ConditionReport check_C1(const SurfaceSpec& S1, const SurfaceSpec& S2,
                         const ConditionOptions& opt) {
  const auto g1 = domain_grid(S1.D, opt.surface_res);
  const auto g2 = domain_grid(S2.D, opt.surface_res);
  std::vector<Vec> n1(g1.size()), n2(g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) n1[i] = unit_normal(S1, g1[i]);
  for (std::size_t j = 0; j < g2.size(); ++j) n2[j] = unit_normal(S2, g2[j]);
  const std::size_t total = g1.size() * g2.size();
  auto [best, arg] = block_min(total, opt.exec, [&](std::size_t k) {
    return wedge_area(n1[k / g2.size()], n2[k % g2.size()]);
  });
  ConditionReport rep;
  rep.condition = "C1";
  rep.infimum = best;
  rep.threshold = opt.theta;
  rep.pass = best >= opt.theta;
  rep.samples = (long long)total;
  rep.witness["xi1"] = vec_json(g1[arg / g2.size()]);
  rep.witness["xi2"] = vec_json(g2[arg % g2.size()]);
  return rep;
}

std::pair<ConditionReport, ConditionReport> check_C2(
    const SurfaceSpec& S1, const SurfaceSpec& S2,
    const std::vector<Vec>& h_samples, const ConditionOptions& opt) {
  const CurveSet cs = solve_all_curves(S1, S2, h_samples, opt);
  const SurfaceSpec* sides[2] = {&S1, &S2};

  // Coarse surface grids for the vol(...) witnesses.
  const int res_t = std::max(4, opt.surface_res / 4);
  const auto t1 = domain_grid(S1.D, res_t);
  const auto t2 = domain_grid(S2.D, res_t);
  std::vector<Vec> N1t(t1.size()), N2t(t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) N1t[i] = unit_normal(S1, t1[i]);
  for (std::size_t i = 0; i < t2.size(); ++i) N2t[i] = unit_normal(S2, t2[i]);

  double inf_global = std::numeric_limits<double>::infinity();
  double inf_local = std::numeric_limits<double>::infinity();
  json wit_global, wit_local;
  long long count_global = 0, count_local = 0, empty_curves = 0;

  for (int side = 0; side < 2; ++side) {
    const SurfaceSpec& Si = *sides[side];
    for (std::size_t ih = 0; ih < h_samples.size(); ++ih) {
      const IntersectionCurve& cur = cs.per_h[side][ih];
      if (cur.empty) {
        ++empty_curves;
        continue;
      }
      // Local variant: |S v ^ n| with embedded vectors.
      for (const CurveSample& s : cur.samples) {
        const Vec Sv = shape_apply_embedded(Si, s.xi, s.tangent_emb);
        const double v = wedge_area(Sv, s.conormal_emb);
        ++count_local;
        if (v < inf_local) {
          inf_local = v;
          wit_local = json{{"side", side + 1},
                       {"h", vec_json(cur.h)},
                       {"xi", vec_json(s.xi)}};
        }
      }
      // Global variant on a subsample of curve pairs.
      std::vector<const CurveSample*> sub;
      const std::size_t stride = std::max<std::size_t>(1, cur.samples.size() / 24);
      for (std::size_t k = 0; k < cur.samples.size(); k += stride)
        sub.push_back(&cur.samples[k]);
      for (std::size_t a = 0; a < sub.size(); ++a)
        for (std::size_t b = a + 1; b < sub.size(); ++b) {
          const Vec Na = unit_normal(Si, sub[a]->xi);
          const Vec Nb = unit_normal(Si, sub[b]->xi);
          const Vec w = Na - Nb;
          const double sep = (sub[a]->pos - sub[b]->pos).norm();
          if (sep < 1e-12) continue;
          const std::size_t pairs = t1.size() * t2.size();
          auto [v, argt] = block_min(pairs, opt.exec, [&](std::size_t k) {
            std::vector<Vec> span = {w, N1t[k / t2.size()], N2t[k % t2.size()]};
            return parallelepiped_volume(span) / sep;
          });
          ++count_global;
          if (v < inf_global) {
            inf_global = v;
            wit_global = json{{"side", side + 1},
                          {"h", vec_json(cur.h)},
                          {"xi_a", vec_json(sub[a]->xi)},
                          {"xi_b", vec_json(sub[b]->xi)},
                          {"xi_t1", vec_json(t1[argt / t2.size()])},
                          {"xi_t2", vec_json(t2[argt % t2.size()])}};
          }
        }
    }
  }
  require(count_local > 0 && count_global > 0, ErrorKind::numeric,
          "check_C2: inconclusive, every translate gave an empty curve");

  // Normal-variation smallness; violation downgrades the global/local
  // equivalence reading of these reports to a warning.
  double nvar = 0.0;
  for (int side = 0; side < 2; ++side) {
    const SurfaceSpec& Si = *sides[side];
    const Vec Nc = unit_normal(Si, Si.D.center);
    for (const Vec& p : domain_grid(Si.D, res_t))
      nvar = std::max(nvar, (unit_normal(Si, p) - Nc).norm());
  }

  auto finish = [&](const char* id, double inf, json wit, long long cnt) {
    ConditionReport rep;
    rep.condition = id;
    rep.infimum = inf;
    rep.threshold = opt.theta;
    rep.pass = inf >= opt.theta;
    rep.samples = cnt;
    rep.witness = std::move(wit);
    rep.details["empty_curves"] = empty_curves;
    rep.details["normal_variation"] = nvar;
    rep.details["warn_nvar"] = nvar > opt.nvar_bound;
    return rep;
  };
  return {finish("C2_global", inf_global, wit_global, count_global),
          finish("C2_local", inf_local, wit_local, count_local)};
}

ConditionReport check_C3(const SurfaceSpec& S1, const SurfaceSpec& S2,
                         const std::vector<Vec>& h_samples,
                         const ConditionOptions& opt) {
  const CurveSet cs = solve_all_curves(S1, S2, h_samples, opt);
  const SurfaceSpec* sides[2] = {&S1, &S2};
  double inf = std::numeric_limits<double>::infinity();
  json wit;
  long long count = 0;
  for (int side = 0; side < 2; ++side)
    for (std::size_t ih = 0; ih < h_samples.size(); ++ih) {
      const IntersectionCurve& cur = cs.per_h[side][ih];
      for (const CurveSample& s : cur.samples) {
        const Vec Sv = shape_apply_embedded(*sides[side], s.xi, s.tangent_emb);
        const double v = std::abs(Sv.dot(s.tangent_emb));
        ++count;
        if (v < inf) {
          inf = v;
          wit = json{{"side", side + 1}, {"h", vec_json(cur.h)}, {"xi", vec_json(s.xi)}};
        }
      }
    }
  require(count > 0, ErrorKind::numeric,
          "check_C3: inconclusive, every translate gave an empty curve");
  ConditionReport rep;
  rep.condition = "C3";
  rep.infimum = inf;
  rep.threshold = opt.theta;
  rep.pass = inf >= opt.theta;
  rep.samples = count;
  rep.witness = wit;
  return rep;
}

ConditionReport check_C3bb(const SurfaceSpec& S1, const SurfaceSpec& S2,
                           const std::vector<Vec>& h_samples,
                           const ConditionOptions& opt) {
  const CurveSet cs = solve_all_curves(S1, S2, h_samples, opt);
  const SurfaceSpec* sides[2] = {&S1, &S2};
  double inf = std::numeric_limits<double>::infinity();
  json wit;
  long long count = 0;
  for (int side = 0; side < 2; ++side)
    for (std::size_t ih = 0; ih < h_samples.size(); ++ih) {
      const IntersectionCurve& cur = cs.per_h[side][ih];
      for (const CurveSample& s : cur.samples) {
        const Mat H = sides[side]->hess(s.xi);
        const double v = wedge_area(Vec(H * s.tangent_proj), s.conormal_proj);
        ++count;
        if (v < inf) {
          inf = v;
          wit = json{{"side", side + 1}, {"h", vec_json(cur.h)}, {"xi", vec_json(s.xi)}};
        }
      }
    }
  require(count > 0, ErrorKind::numeric,
          "check_C3bb: inconclusive, every translate gave an empty curve");
  ConditionReport rep;
  rep.condition = "C3bb";
  rep.infimum = inf;
  rep.threshold = opt.theta;
  rep.pass = inf >= opt.theta;
  rep.samples = count;
  rep.witness = wit;
  return rep;
}

ConditionReport check_CLee(const SurfaceSpec& S1, const SurfaceSpec& S2,
                           const std::vector<Vec>& h_samples,
                           const ConditionOptions& opt) {
  const CurveSet cs = solve_all_curves(S1, S2, h_samples, opt);
  const SurfaceSpec* sides[2] = {&S1, &S2};
  double inf = std::numeric_limits<double>::infinity();
  json wit;
  long long count = 0, singular = 0, curve_points = 0;
  for (int side = 0; side < 2; ++side)
    for (std::size_t ih = 0; ih < h_samples.size(); ++ih) {
      const IntersectionCurve& cur = cs.per_h[side][ih];
      for (const CurveSample& s : cur.samples) {
        ++curve_points;
        const Mat H = sides[side]->hess(s.xi);
        if (std::abs(H.determinant()) < 1e-8) {
          ++singular;
          continue;
        }
        const Vec Hin = H.inverse() * s.conormal_proj;
        const double v = std::abs(Hin.dot(s.conormal_proj));
        ++count;
        if (v < inf) {
          inf = v;
          wit = json{{"side", side + 1}, {"h", vec_json(cur.h)}, {"xi", vec_json(s.xi)}};
        }
      }
    }
  require(curve_points > 0, ErrorKind::numeric,
          "check_CLee: inconclusive, every translate gave an empty curve");
  ConditionReport rep;
  rep.condition = "CLee";
  rep.infimum = count > 0 ? inf : 0.0;
  rep.threshold = opt.theta;
  rep.samples = count;
  rep.witness = wit;
  rep.details["not_applicable"] = singular > 0;
  rep.details["singular_samples"] = singular;
  rep.pass = singular == 0 && count > 0 && inf >= opt.theta;
  return rep;
}

std::pair<ConditionReport, ConditionReport> check_C3bb_and_CLee(
    const SurfaceSpec& S1, const SurfaceSpec& S2,
    const std::vector<Vec>& h_samples, const ConditionOptions& opt) {
  return {check_C3bb(S1, S2, h_samples, opt),
          check_CLee(S1, S2, h_samples, opt)};
}

ConditionReport check_LFW(const SurfaceSpec& S1, const SurfaceSpec& S2,
                          const std::vector<Vec>& h_samples,
                          const ConditionOptions& opt) {
  require(S1.n() == 2, ErrorKind::validation, "check_LFW: implemented for n = 2");
  const auto g2 = domain_grid(S2.D, opt.surface_res);
  std::vector<Vec> N2(g2.size());
  for (std::size_t j = 0; j < g2.size(); ++j) N2[j] = unit_normal(S2, g2[j]);

  double inf = std::numeric_limits<double>::infinity();
  json wit;
  long long count = 0;
  for (const Vec& h : h_samples) {
    const IntersectionCurve cur = solve_intersection_curve(S1, S2, h, opt.curve_scan);
    if (cur.empty) continue;
    for (const CurveSample& s : cur.samples) {
      const Vec N1 = unit_normal(S1, s.xi);
      const Vec Sv = shape_apply_embedded(S1, s.xi, s.tangent_emb);
      const Vec m = cross3(N1, Sv);
      const double mn = m.norm();
      ++count;
      if (mn < 1e-12) {
        // Degenerate cone sheet (flat curve direction): transversality fails.
        if (0.0 < inf) {
          inf = 0.0;
          wit = json{{"h", vec_json(cur.h)},
                 {"xi", vec_json(s.xi)},
                 {"degenerate_sheet", true}};
        }
        continue;
      }
      const Vec mu = m / mn;
      auto [v, argj] = block_min(g2.size(), opt.exec, [&](std::size_t k) {
        return std::abs(N2[k].dot(mu));
      });
      if (v < inf) {
        inf = v;
        wit = json{{"h", vec_json(cur.h)},
               {"xi", vec_json(s.xi)},
               {"xi2", vec_json(g2[argj])}};
      }
    }
  }
  require(count > 0, ErrorKind::numeric,
          "check_LFW: inconclusive, every translate gave an empty curve");
  ConditionReport rep;
  rep.condition = "LFW";
  rep.infimum = inf;
  rep.threshold = opt.theta;
  rep.pass = inf >= opt.theta;
  rep.samples = count;
  rep.witness = wit;
  return rep;
}

ConeCloud normal_cone_samples(const SurfaceSpec& S1,
                              const IntersectionCurve& curve,
                              const std::vector<double>& alphas) {
  require(!curve.empty, ErrorKind::validation,
          "normal_cone_samples: empty curve");
  require(!alphas.empty(), ErrorKind::validation,
          "normal_cone_samples: empty alpha list");
  for (double a : alphas)
    require(std::abs(a) > 1e-9, ErrorKind::validation,
            "normal_cone_samples: alphas must exclude the apex");
  ConeCloud cloud;
  double max_gap = 0.0;
  Vec prev_ray;
  double max_alpha = 0.0;
  for (double a : alphas) max_alpha = std::max(max_alpha, std::abs(a));
  for (const CurveSample& s : curve.samples) {
    const Vec ray = unit_normal(S1, s.xi);
    const Vec Sv = shape_apply_embedded(S1, s.xi, s.tangent_emb);
    const Vec m = cross3(ray, Sv);
    const double mn = m.norm();
    Vec face = Vec::Zero(3);
    if (mn > 1e-10) face = m / mn;
    for (double a : alphas) {
      ConePoint p;
      p.pos = a * ray;
      p.unit_ray = ray;
      p.face_normal = face;
      p.alpha = a;
      cloud.points.push_back(std::move(p));
    }
    if (prev_ray.size() > 0)
      max_gap = std::max(max_gap, (ray - prev_ray).norm());
    prev_ray = ray;
  }
  double alpha_gap = 0.0;
  std::vector<double> sorted = alphas;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i)
    alpha_gap = std::max(alpha_gap, sorted[i] - sorted[i - 1]);
  cloud.patch_radius = 2.0 * std::max(max_gap * max_alpha, alpha_gap);
  if (cloud.patch_radius == 0.0) cloud.patch_radius = 0.5 * max_alpha;
  return cloud;
}

ConeCloud normal_cone_samples(const SurfaceSpec& S1, const SurfaceSpec& S2,
                              const Vec& h, const std::vector<double>& alphas,
                              int scan_res) {
  const IntersectionCurve curve = solve_intersection_curve(S1, S2, h, scan_res);
  require(!curve.empty, ErrorKind::numeric,
          "normal_cone_samples: the translate gave an empty curve");
  return normal_cone_samples(S1, curve, alphas);
}

}  // namespace bilin
