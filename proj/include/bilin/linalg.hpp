#pragma once
// Small dense helpers used across the geometry and experiment code:
// wedge areas, Gram-determinant volumes, orthonormalization, line fits.

#include <Eigen/Dense>
#include <vector>

#include "bilin/errors.hpp"

namespace bilin {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// |u ^ v| = sqrt(|u|^2 |v|^2 - <u,v>^2), valid in any ambient dimension.
inline double wedge_area(const Vec& u, const Vec& v) {
  require(u.size() == v.size(), ErrorKind::validation,
          "wedge_area: dimension mismatch");
  const double uu = u.squaredNorm(), vv = v.squaredNorm(), uv = u.dot(v);
  const double s = uu * vv - uv * uv;
  return s > 0.0 ? std::sqrt(s) : 0.0;
}

// k-volume of the parallelepiped spanned by the columns of V (Gram root).
inline double parallelepiped_volume(const Mat& V) {
  const Mat G = V.transpose() * V;
  const double d = G.determinant();
  return d > 0.0 ? std::sqrt(d) : 0.0;
}

inline double parallelepiped_volume(const std::vector<Vec>& vs) {
  require(!vs.empty(), ErrorKind::validation, "parallelepiped_volume: empty span");
  Mat V(vs[0].size(), (Eigen::Index)vs.size());
  for (std::size_t j = 0; j < vs.size(); ++j) V.col((Eigen::Index)j) = vs[j];
  return parallelepiped_volume(V);
}

// Gram-Schmidt on the columns of V; trips on (near-)dependent input.
inline Mat orthonormalize(const Mat& V, double tol = 1e-12) {
  Mat U = V;
  for (Eigen::Index j = 0; j < U.cols(); ++j) {
    for (Eigen::Index k = 0; k < j; ++k)
      U.col(j) -= U.col(k).dot(U.col(j)) * U.col(k);
    const double nrm = U.col(j).norm();
    require(nrm > tol, ErrorKind::numeric,
            "orthonormalize: near-dependent tangent frame");
    U.col(j) /= nrm;
  }
  return U;
}

// Least-squares slope (and intercept) of y against x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x,
                        const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::validation,
          "fit_line: need at least two points");
  const double n = (double)x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  require(std::abs(den) > 1e-300, ErrorKind::numeric, "fit_line: degenerate xs");
  LineFit f;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

// Slope of log(y) against log(x); all inputs must be positive.
inline LineFit fit_loglog(const std::vector<double>& x,
                          const std::vector<double>& y) {
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0.0 && y[i] > 0.0, ErrorKind::numeric,
            "fit_loglog: nonpositive sample");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  return fit_line(lx, ly);
}

}  // namespace bilin
