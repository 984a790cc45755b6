#pragma once

#include "mbridge/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace mbridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

inline bool is_symmetric(const Matrix& a, double tol = 1e-12) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

// Spectral decomposition of a symmetric matrix; eigenvalues ascending.
struct SymEigen {
  Vector values;
  Matrix vectors;

  template <class F>
  Matrix apply(F&& f) const {
    Vector fv = values.unaryExpr(f);
    return vectors * fv.asDiagonal() * vectors.transpose();
  }
};

inline SymEigen sym_eigen(const Matrix& a) {
  if (!is_symmetric(a)) throw StructuralError("matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed", 0.0);
  return {es.eigenvalues(), es.eigenvectors()};
}

// Positive definite in the relative sense used throughout the library:
// smallest eigenvalue above 1e-12 times the largest.
inline bool is_spd(const Matrix& a) {
  if (!is_symmetric(a)) return false;
  const SymEigen e = sym_eigen(a);
  const double top = e.values.cwiseAbs().maxCoeff();
  return top > 0.0 && e.values.minCoeff() > 1e-12 * top;
}

template <class E = StructuralError>
SymEigen require_spd(const Matrix& a, const std::string& name) {
  if (!is_symmetric(a)) throw E(name + " is not symmetric");
  SymEigen e = sym_eigen(a);
  const double top = e.values.cwiseAbs().maxCoeff();
  if (!(top > 0.0) || e.values.minCoeff() <= 1e-12 * top)
    throw E(name + " is not positive definite");
  return e;
}

inline Matrix sqrtm_spd(const SymEigen& e) {
  return e.apply([](double l) { return std::sqrt(l); });
}

inline Matrix inverse_spd(const SymEigen& e) {
  return e.apply([](double l) { return 1.0 / l; });
}

inline double logdet_spd(const SymEigen& e) { return e.values.array().log().sum(); }

}  // namespace linalg
}  // namespace mbridge
