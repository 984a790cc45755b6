#pragma once

// Finitely supported probability measures, couplings between them, and the
// elementary functionals the solvers are built on: relative entropy, moments,
// the convex-order test and the discrete max-covariance.

#include "mbridge/errors.hpp"
#include "mbridge/linalg.hpp"
#include "mbridge/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mbridge {

// Relative entropy of a measure that is not absolutely continuous w.r.t. its
// reference. Returned explicitly, never produced by overflow.
inline constexpr double kInfiniteEntropy = std::numeric_limits<double>::infinity();

// Atoms are the rows of an n x d matrix.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;

  // Validates weights (positive, summing to one within 1e-12) and merges
  // atoms closer than 1e-12 in Euclidean distance, summing their weights.
  DiscreteMeasure(Matrix atoms, Vector weights) {
    if (atoms.rows() != weights.size())
      throw StructuralError("measure: " + std::to_string(atoms.rows()) + " atoms but " +
                            std::to_string(weights.size()) + " weights");
    if (atoms.rows() == 0) throw StructuralError("measure: no atoms");
    if (atoms.cols() == 0) throw StructuralError("measure: zero dimension");
    if (!atoms.allFinite() || !weights.allFinite())
      throw StructuralError("measure: non-finite atom or weight");
    for (Eigen::Index i = 0; i < weights.size(); ++i)
      if (!(weights(i) > 0.0))
        throw StructuralError("measure: weight " + std::to_string(i) + " is not positive");
    if (std::abs(weights.sum() - 1.0) > 1e-12)
      throw StructuralError("measure: weights sum to " + std::to_string(weights.sum()));
    merge_duplicates(atoms, weights);
    atoms_ = std::move(atoms);
    weights_ = std::move(weights);
  }

  static DiscreteMeasure dirac(const Vector& point) {
    return DiscreteMeasure(point.transpose(), Vector::Ones(1));
  }

  // One-dimensional convenience constructor.
  static DiscreteMeasure line(const std::vector<double>& atoms, const std::vector<double>& weights) {
    Matrix a(static_cast<Eigen::Index>(atoms.size()), 1);
    for (std::size_t i = 0; i < atoms.size(); ++i) a(static_cast<Eigen::Index>(i), 0) = atoms[i];
    Vector w = Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    return DiscreteMeasure(std::move(a), std::move(w));
  }

  Eigen::Index size() const { return atoms_.rows(); }
  Eigen::Index dimension() const { return atoms_.cols(); }
  const Matrix& atoms() const { return atoms_; }
  const Vector& weights() const { return weights_; }
  Vector atom(Eigen::Index i) const { return atoms_.row(i).transpose(); }
  double weight(Eigen::Index i) const { return weights_(i); }

  DiscreteMeasure translated(const Vector& shift) const {
    Matrix a = atoms_;
    a.rowwise() += shift.transpose();
    return DiscreteMeasure(std::move(a), weights_);
  }

 private:
  static void merge_duplicates(Matrix& atoms, Vector& weights) {
    const Eigen::Index n = atoms.rows();
    std::vector<Eigen::Index> keep;
    std::vector<double> w;
    for (Eigen::Index i = 0; i < n; ++i) {
      bool merged = false;
      for (std::size_t k = 0; k < keep.size(); ++k) {
        if ((atoms.row(i) - atoms.row(keep[k])).norm() <= 1e-12) {
          w[k] += weights(i);
          merged = true;
          break;
        }
      }
      if (!merged) {
        keep.push_back(i);
        w.push_back(weights(i));
      }
    }
    if (static_cast<Eigen::Index>(keep.size()) == n) return;
    Matrix a(static_cast<Eigen::Index>(keep.size()), atoms.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) a.row(static_cast<Eigen::Index>(k)) = atoms.row(keep[k]);
    atoms = std::move(a);
    weights = Eigen::Map<Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  }

  Matrix atoms_;
  Vector weights_;
};

struct GaussianSpec {
  Vector mean;
  Matrix covariance;

  GaussianSpec() = default;
  GaussianSpec(Vector m, Matrix c) : mean(std::move(m)), covariance(std::move(c)) {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
      throw StructuralError("gaussian: covariance shape does not match mean");
    linalg::require_spd(covariance, "gaussian covariance");
  }
  Eigen::Index dimension() const { return mean.size(); }
};

// Joint weights over supp(mu) x supp(nu). Marginals are not enforced: solver
// iterates are allowed to be slightly off.
struct Coupling {
  Matrix weights;

  double row_residual(const DiscreteMeasure& mu) const {
    return (weights.rowwise().sum() - mu.weights()).cwiseAbs().maxCoeff();
  }
  double column_residual(const DiscreteMeasure& nu) const {
    return (weights.colwise().sum().transpose() - nu.weights()).cwiseAbs().maxCoeff();
  }
  // max_i |sum_j m_ij (y_j - x_i)| / mu_i
  double martingale_residual(const DiscreteMeasure& mu, const DiscreteMeasure& nu) const {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
      Vector drift = Vector::Zero(mu.dimension());
      for (Eigen::Index j = 0; j < weights.cols(); ++j)
        drift += weights(i, j) * (nu.atom(j) - mu.atom(i));
      worst = std::max(worst, drift.norm() / mu.weight(i));
    }
    return worst;
  }
  bool is_martingale(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double tol = 1e-9) const {
    return (weights.array() >= 0.0).all() && row_residual(mu) < tol && column_residual(nu) < tol &&
           martingale_residual(mu, nu) < tol;
  }
  // Conditional law of the second coordinate given the i-th first atom.
  Vector conditional(Eigen::Index i) const {
    Vector row = weights.row(i).transpose();
    return row / row.sum();
  }
};

inline Coupling product_coupling(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  return {mu.weights() * nu.weights().transpose()};
}

// ---------------------------------------------------------------------------
// Relative entropy

// sum_i p_i log(p_i / q_i), with 0 log 0 = 0 and the infinite sentinel when
// some p_i > 0 meets q_i = 0.
template <class P, class Q>
double relative_entropy(const Eigen::DenseBase<P>& p, const Eigen::DenseBase<Q>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw StructuralError("relative_entropy: shape mismatch");
  double h = 0.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double a = p(r, c);
      const double b = q(r, c);
      if (a < 0.0 || b < 0.0) throw StructuralError("relative_entropy: negative mass");
      if (a == 0.0) continue;
      if (b == 0.0) return kInfiniteEntropy;
      h += a * std::log(a / b);
    }
  }
  return h;
}

inline double relative_entropy(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  if (p.size() != q.size() || p.dimension() != q.dimension() ||
      (p.atoms() - q.atoms()).cwiseAbs().maxCoeff() > 1e-12)
    throw StructuralError("relative_entropy: measures live on different atoms");
  return relative_entropy(p.weights(), q.weights());
}

// H(m | mu (x) nu) for a coupling.
inline double relative_entropy(const Coupling& m, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (m.weights.rows() != mu.size() || m.weights.cols() != nu.size())
    throw StructuralError("relative_entropy: coupling shape does not match marginals");
  const Matrix ref = mu.weights() * nu.weights().transpose();
  return relative_entropy(m.weights, ref);
}

// ---------------------------------------------------------------------------
// Moments

struct Moments {
  Vector mean;
  double second_moment = 0.0;  // E|X|^2
  Matrix covariance;
};

inline Moments barycenter_and_moments(const DiscreteMeasure& p) {
  Moments m;
  m.mean = p.atoms().transpose() * p.weights();
  m.second_moment = p.weights().dot(p.atoms().rowwise().squaredNorm());
  const Matrix centered = p.atoms().rowwise() - m.mean.transpose();
  m.covariance = centered.transpose() * p.weights().asDiagonal() * centered;
  return m;
}

// ---------------------------------------------------------------------------
// Convex order

struct ConvexOrderResult {
  bool in_order = false;
  std::optional<Coupling> witness;
};

// Feasibility of {row sums, column sums, conditional barycenters, m >= 0}.
inline ConvexOrderResult check_convex_order(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (mu.dimension() != nu.dimension())
    throw StructuralError("check_convex_order: dimension mismatch (" + std::to_string(mu.dimension()) +
                          " vs " + std::to_string(nu.dimension()) + ")");
  const Eigen::Index n = mu.size();
  const Eigen::Index k = nu.size();
  const Eigen::Index d = mu.dimension();
  const Eigen::Index vars = n * k;
  // Row sums (n), column sums (k - 1, one is implied), barycenters (n d).
  const Eigen::Index rows = n + (k - 1) + n * d;
  Matrix A = Matrix::Zero(rows, vars);
  Vector b = Vector::Zero(rows);
  auto var = [k](Eigen::Index i, Eigen::Index j) { return i * k + j; };
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n; ++i, ++r) {
    for (Eigen::Index j = 0; j < k; ++j) A(r, var(i, j)) = 1.0;
    b(r) = mu.weight(i);
  }
  for (Eigen::Index j = 0; j + 1 < k; ++j, ++r) {
    for (Eigen::Index i = 0; i < n; ++i) A(r, var(i, j)) = 1.0;
    b(r) = nu.weight(j);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < d; ++c, ++r) {
      for (Eigen::Index j = 0; j < k; ++j)
        A(r, var(i, j)) = nu.atoms()(j, c) - mu.atoms()(i, c);
    }
  }
  const lp::Result res = lp::solve(A, b, Vector::Zero(vars));
  ConvexOrderResult out;
  if (res.status != lp::Status::optimal) return out;
  Coupling m{Matrix(n, k)};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) m.weights(i, j) = res.x(var(i, j));
  out.in_order = m.is_martingale(mu, nu, 1e-9);
  if (out.in_order) out.witness = std::move(m);
  return out;
}

// Largest t such that x = sum_j lambda_j y_j with sum lambda = 1 and every
// lambda_j >= t. Positive iff x is in the relative interior of conv(atoms);
// negative infinity when x is outside the hull.
inline double relative_interior_margin(const Vector& x, const Matrix& atoms) {
  const Eigen::Index k = atoms.rows();
  const Eigen::Index d = atoms.cols();
  if (x.size() != d) throw StructuralError("relative_interior_margin: dimension mismatch");
  if (d == 1) {
    const double lo = atoms.col(0).minCoeff();
    const double hi = atoms.col(0).maxCoeff();
    if (x(0) < lo || x(0) > hi) return -std::numeric_limits<double>::infinity();
    if (hi == lo) return 1.0 / static_cast<double>(k);
  }
  // Variables: t >= 0 and slacks s_j >= 0 with lambda_j = t + s_j.
  Matrix A = Matrix::Zero(d + 1, k + 1);
  Vector b(d + 1);
  for (Eigen::Index c = 0; c < d; ++c) {
    A(c, 0) = atoms.col(c).sum();
    for (Eigen::Index j = 0; j < k; ++j) A(c, j + 1) = atoms(j, c);
    b(c) = x(c);
  }
  A(d, 0) = static_cast<double>(k);
  for (Eigen::Index j = 0; j < k; ++j) A(d, j + 1) = 1.0;
  b(d) = 1.0;
  Vector cost = Vector::Zero(k + 1);
  cost(0) = -1.0;
  const lp::Result res = lp::solve(A, b, cost);
  if (res.status != lp::Status::optimal) return -std::numeric_limits<double>::infinity();
  return res.x(0);
}

// ---------------------------------------------------------------------------
// Max-covariance

struct McovResult {
  double value = 0.0;
  Coupling coupling;
};

// sup over couplings of the integral of x . y, solved as a transport LP.
inline McovResult mcov_lp(const DiscreteMeasure& alpha, const DiscreteMeasure& beta) {
  if (alpha.dimension() != beta.dimension()) throw StructuralError("mcov: dimension mismatch");
  const Eigen::Index n = alpha.size();
  const Eigen::Index k = beta.size();
  Matrix A = Matrix::Zero(n + k - 1, n * k);
  Vector b(n + k - 1);
  Vector cost(n * k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      A(i, i * k + j) = 1.0;
      if (j + 1 < k) A(n + j, i * k + j) = 1.0;
      cost(i * k + j) = -alpha.atom(i).dot(beta.atom(j));
    }
    b(i) = alpha.weight(i);
  }
  for (Eigen::Index j = 0; j + 1 < k; ++j) b(n + j) = beta.weight(j);
  const lp::Result res = lp::solve(A, b, cost);
  if (res.status != lp::Status::optimal) throw NumericalError("mcov: transport LP failed", 0.0);
  McovResult out;
  out.coupling.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      res.x.data(), n, k);
  out.value = -res.objective;
  return out;
}

// Comonotone pairing of sorted supports (d = 1).
inline McovResult mcov_comonotone(const DiscreteMeasure& alpha, const DiscreteMeasure& beta) {
  if (alpha.dimension() != 1 || beta.dimension() != 1)
    throw StructuralError("mcov_comonotone: requires d = 1");
  const Eigen::Index n = alpha.size();
  const Eigen::Index k = beta.size();
  std::vector<Eigen::Index> ia(static_cast<std::size_t>(n)), ib(static_cast<std::size_t>(k));
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), 0);
  std::sort(ia.begin(), ia.end(), [&](auto a, auto b) { return alpha.atoms()(a, 0) < alpha.atoms()(b, 0); });
  std::sort(ib.begin(), ib.end(), [&](auto a, auto b) { return beta.atoms()(a, 0) < beta.atoms()(b, 0); });
  McovResult out;
  out.coupling.weights = Matrix::Zero(n, k);
  // Walk the merged breakpoints of the two cumulative distribution functions.
  std::size_t p = 0, q = 0;
  double pos = 0.0;
  double ca = alpha.weight(ia[0]);
  double cb = beta.weight(ib[0]);
  while (p < ia.size() && q < ib.size()) {
    const double next = std::min(ca, cb);
    const double mass = next - pos;
    if (mass > 0.0) {
      out.coupling.weights(ia[p], ib[q]) += mass;
      out.value += mass * alpha.atoms()(ia[p], 0) * beta.atoms()(ib[q], 0);
    }
    pos = next;
    const bool adv_a = ca <= next;
    const bool adv_b = cb <= next;
    if (adv_a && ++p < ia.size()) ca += alpha.weight(ia[p]);
    if (adv_b && ++q < ib.size()) cb += beta.weight(ib[q]);
  }
  return out;
}

inline McovResult mcov_discrete(const DiscreteMeasure& alpha, const DiscreteMeasure& beta) {
  if (alpha.dimension() != beta.dimension()) throw StructuralError("mcov: dimension mismatch");
  return alpha.dimension() == 1 ? mcov_comonotone(alpha, beta) : mcov_lp(alpha, beta);
}

// ---------------------------------------------------------------------------
// Change of reference to the Gaussian kernel. Atoms are scored against the
// standard normal density at the atom, so the (formally infinite) common
// part of discrete-vs-Lebesgue entropies cancels.

inline double log_std_normal_density(const Vector& z) {
  const double d = static_cast<double>(z.size());
  return -0.5 * z.squaredNorm() - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

// H(nu | gamma) under the density-proxy convention.
inline double entropy_vs_standard_gaussian(const DiscreteMeasure& nu) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < nu.size(); ++j)
    h += nu.weight(j) * (std::log(nu.weight(j)) - log_std_normal_density(nu.atom(j)));
  return h;
}

// H(m | mu . gamma), reference kernel x -> N(x, I).
inline double entropy_vs_gaussian_kernel(const Coupling& m, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    for (Eigen::Index j = 0; j < nu.size(); ++j) {
      const double w = m.weights(i, j);
      if (w <= 0.0) continue;
      h += w * (std::log(w / mu.weight(i)) - log_std_normal_density(nu.atom(j) - mu.atom(i)));
    }
  }
  return h;
}

// |H(m|mu x nu) + H(nu|gamma) - H(m|mu.gamma) - m2(mu)/2|; vanishes for
// martingale couplings.
inline double gaussian_reference_identity_check(const Coupling& m, const DiscreteMeasure& mu,
                                                const DiscreteMeasure& nu) {
  const double lhs = relative_entropy(m, mu, nu) + entropy_vs_standard_gaussian(nu);
  const double rhs = entropy_vs_gaussian_kernel(m, mu, nu) + 0.5 * barycenter_and_moments(mu).second_moment;
  if (std::isinf(lhs) || std::isinf(rhs)) return std::isinf(lhs) && std::isinf(rhs) ? 0.0 : kInfiniteEntropy;
  return std::abs(lhs - rhs);
}

}  // namespace mbridge
