#pragma once

// Discrete entropic martingale transport.
//
// The optimal coupling has the Gibbs form
//
//     m_ij = mu_i nu_j exp(phi_i + psi_j + h_i . (y_j - x_i)),
//
// and the solver alternates two exact block updates of the potentials:
//   * per mu-atom, a damped Newton solve of the strictly concave fiber problem
//         sup_h  h . x_i - log sum_j nu_j exp(psi_j + h . y_j),
//     which makes row i a probability kernel with barycenter x_i;
//   * a column rescaling of psi, which restores the nu-marginal.
// Both are coordinate maximizations of the same concave Lagrangian, so the
// dual objective is nondecreasing along the outer iterations.

#include "mbridge/errors.hpp"
#include "mbridge/linalg.hpp"
#include "mbridge/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mbridge {

struct SolverConfig {
  double marginal_tolerance = 1e-10;
  double martingale_tolerance = 1e-10;
  int max_outer_iterations = 10000;
  int newton_max_steps = 50;
  double newton_gradient_tolerance = 1e-12;
  double h_max = 1e6;
  double backtracking_factor = 0.5;
  double armijo_constant = 1e-4;
  double max_condition_number = 1e14;

  void validate() const {
    if (!(marginal_tolerance > 0 && martingale_tolerance > 0 && newton_gradient_tolerance > 0))
      throw StructuralError("solver config: tolerances must be positive");
    if (!(h_max > 1.0)) throw StructuralError("solver config: h_max must exceed 1");
    if (max_outer_iterations <= 0 || newton_max_steps <= 0)
      throw StructuralError("solver config: iteration caps must be positive");
    if (!(backtracking_factor > 0 && backtracking_factor < 1 && armijo_constant > 0 && armijo_constant < 0.5))
      throw StructuralError("solver config: invalid line-search constants");
  }
};

// Gibbs potentials. h holds one row per mu-atom.
struct PotentialTriple {
  Vector phi;
  Vector psi;
  Matrix h;
};

struct SolveReport {
  Coupling coupling;
  PotentialTriple potentials;
  double primal_value = std::numeric_limits<double>::quiet_NaN();
  double dual_value = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double marginal_residual = std::numeric_limits<double>::infinity();
  double martingale_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  // Dual objective of the psi iterate at the start of each outer iteration.
  std::vector<double> dual_history;
};

namespace detail {

inline double log_sum_exp(const Vector& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

// Orthonormal basis of the directions spanned by the centered atoms; the
// Newton iterate is restricted to it so flat supports stay well posed.
inline Matrix affine_directions(const Matrix& atoms) {
  const Vector center = atoms.colwise().mean().transpose();
  const Matrix centered = atoms.rowwise() - center.transpose();
  if (centered.rows() < 2) return Matrix::Zero(atoms.cols(), 0);
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double top = s.size() ? s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k)
    if (s(k) > 1e-12 * std::max(1.0, top)) ++rank;
  return svd.matrixV().leftCols(rank);
}

struct FiberEval {
  double log_partition = 0.0;  // log sum_j nu_j exp(psi_j + h . y_j)
  Vector weights;              // conditional law m^h
  Vector barycenter;
};

inline FiberEval eval_fiber(const Vector& h, const Vector& log_nu_psi, const Matrix& atoms) {
  FiberEval f;
  Vector ell = log_nu_psi + atoms * h;
  f.log_partition = log_sum_exp(ell);
  f.weights = (ell.array() - f.log_partition).exp();
  f.barycenter = atoms.transpose() * f.weights;
  return f;
}

}  // namespace detail

struct InnerSolution {
  Vector h;
  double phi = 0.0;    // h . x - log sum_j nu_j exp(psi_j + h . y_j)
  Vector conditional;  // m^h over nu-atoms
  int steps = 0;
};

// Damped Newton on the fiber problem without the relative-interior check.
// `directions` must come from detail::affine_directions(nu.atoms()).
inline InnerSolution inner_dual_solve_unchecked(const Vector& x, const Vector& psi, const DiscreteMeasure& nu,
                                                const Matrix& directions, const SolverConfig& config,
                                                const Vector* warm_start = nullptr, long fiber = -1) {
  const Matrix& Y = nu.atoms();
  const Eigen::Index r = directions.cols();
  const Vector log_nu_psi = nu.weights().array().log().matrix() + psi;

  Vector c = Vector::Zero(r);
  if (warm_start && warm_start->size() == x.size()) c = directions.transpose() * *warm_start;

  auto objective = [&](const Vector& coeffs, detail::FiberEval& out) {
    const Vector h = directions * coeffs;
    out = detail::eval_fiber(h, log_nu_psi, Y);
    return h.dot(x) - out.log_partition;
  };

  detail::FiberEval f;
  double value = objective(c, f);
  InnerSolution sol;
  for (int step = 0;; ++step) {
    const Vector grad_full = x - f.barycenter;
    if (grad_full.norm() < config.newton_gradient_tolerance || r == 0) break;
    if (step >= config.newton_max_steps)
      throw NotConverged("inner Newton: gradient " + std::to_string(grad_full.norm()) + " after " +
                         std::to_string(step) + " steps at fiber " + std::to_string(fiber));
    const Vector g = directions.transpose() * grad_full;
    const Matrix centered = Y.rowwise() - f.barycenter.transpose();
    const Matrix cov = centered.transpose() * f.weights.asDiagonal() * centered;
    const Matrix hess = directions.transpose() * cov * directions;
    Eigen::SelfAdjointEigenSolver<Matrix> es(hess);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > config.max_condition_number)
      throw DegenerateFiber("inner Newton: conditional covariance is singular (condition " +
                                std::to_string(lo > 0 ? hi / lo : std::numeric_limits<double>::infinity()) +
                                ") at fiber " + std::to_string(fiber),
                            fiber);
    const Vector dir = es.eigenvectors() *
                       (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * g));
    const double slope = g.dot(dir);
    double t = 1.0;
    detail::FiberEval trial_eval;
    Vector trial;
    double trial_value = 0.0;
    // Armijo backtracking; the small absolute slack lets the last steps pass
    // at round-off level.
    for (;;) {
      trial = c + t * dir;
      trial_value = objective(trial, trial_eval);
      if (std::isfinite(trial_value) &&
          trial_value >= value + config.armijo_constant * t * slope - 1e-15 * (1.0 + std::abs(value)))
        break;
      t *= config.backtracking_factor;
      if (t < 1e-30)
        throw NotConverged("inner Newton: line search failed at fiber " + std::to_string(fiber));
    }
    c = trial;
    value = trial_value;
    f = std::move(trial_eval);
    sol.steps = step + 1;
    if ((directions * c).norm() > config.h_max)
      throw DualDivergence("inner Newton: |h| exceeded " + std::to_string(config.h_max) + " at fiber " +
                               std::to_string(fiber),
                           fiber);
  }
  sol.h = directions * c;
  sol.phi = value;
  sol.conditional = std::move(f.weights);
  return sol;
}

// Margin below which a start point counts as lying on the relative boundary.
inline constexpr double kInteriorMargin = 1e-10;

// Solves sup_h h . x - log sum_j nu_j exp(psi_j + h . y_j) after checking that
// x lies in the relative interior of conv(supp nu).
inline InnerSolution inner_dual_solve(const Vector& x, const Vector& psi, const DiscreteMeasure& nu,
                                      const SolverConfig& config = {}) {
  config.validate();
  if (x.size() != nu.dimension()) throw StructuralError("inner_dual_solve: dimension mismatch");
  if (psi.size() != nu.size()) throw StructuralError("inner_dual_solve: psi has wrong length");
  if (!(relative_interior_margin(x, nu.atoms()) > kInteriorMargin))
    throw NotIrreducible("inner_dual_solve: point is not in the relative interior of conv(supp nu)");
  return inner_dual_solve_unchecked(x, psi, nu, detail::affine_directions(nu.atoms()), config);
}

// ---------------------------------------------------------------------------
// Values

// H(m | mu x nu), evaluated both directly and through the disintegration
// sum_x mu_x H(m_x | nu); the two must agree to round-off.
inline double primal_value(const Coupling& m, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  const double direct = relative_entropy(m, mu, nu);
  double disintegrated = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const Vector kernel = m.weights.row(i).transpose() / mu.weight(i);
    disintegrated += mu.weight(i) * relative_entropy(kernel, nu.weights());
  }
  if (std::isinf(direct) || std::isinf(disintegrated)) return kInfiniteEntropy;
  if (std::abs(direct - disintegrated) > 1e-12 * (1.0 + std::abs(direct)))
    throw NumericalError("primal_value: direct and disintegrated entropies disagree",
                         std::abs(direct - disintegrated));
  return direct;
}

inline double dual_value(const Vector& psi, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                         const SolverConfig& config = {}) {
  if (psi.size() != nu.size()) throw StructuralError("dual_value: psi has wrong length");
  if (mu.dimension() != nu.dimension()) throw StructuralError("dual_value: dimension mismatch");
  config.validate();
  const Matrix dirs = detail::affine_directions(nu.atoms());
  double value = nu.weights().dot(psi);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const Vector x = mu.atom(i);
    if (!(relative_interior_margin(x, nu.atoms()) > kInteriorMargin))
      throw NotIrreducible("dual_value: mu-atom " + std::to_string(i) + " is not interior", i);
    value += mu.weight(i) * inner_dual_solve_unchecked(x, psi, nu, dirs, config, nullptr, i).phi;
  }
  return value;
}

// Removes the nu-weighted affine part a + b . y from psi, absorbing it into
// phi and h so the Gibbs density is unchanged. Afterwards
// sum_j nu_j psi_j = 0 and sum_j nu_j psi_j y_j = 0.
inline void fix_gauge(PotentialTriple& p, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  const Eigen::Index k = nu.size();
  const Eigen::Index d = nu.dimension();
  Matrix design(k, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = nu.atoms();
  const Vector sw = nu.weights().array().sqrt();
  const Matrix wd = sw.asDiagonal() * design;
  const Vector wp = sw.asDiagonal() * p.psi;
  const Vector coef = wd.completeOrthogonalDecomposition().solve(wp);
  const double a = coef(0);
  const Vector b = coef.tail(d);
  p.psi -= design * coef;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    p.phi(i) += a + b.dot(mu.atom(i));
    p.h.row(i) += b.transpose();
  }
}

// m_ij = mu_i nu_j exp(phi_i + psi_j + h_i . (y_j - x_i)).
inline Coupling assemble_gibbs(const PotentialTriple& p, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  Coupling m{Matrix(mu.size(), nu.size())};
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    for (Eigen::Index j = 0; j < nu.size(); ++j) {
      const double e = p.phi(i) + p.psi(j) + p.h.row(i).dot(nu.atoms().row(j) - mu.atoms().row(i));
      m.weights(i, j) = mu.weight(i) * nu.weight(j) * std::exp(e);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Outer solver

inline SolveReport sinkhorn_msb(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                const SolverConfig& config = {}) {
  config.validate();
  if (mu.dimension() != nu.dimension())
    throw StructuralError("sinkhorn_msb: dimension mismatch (" + std::to_string(mu.dimension()) + " vs " +
                          std::to_string(nu.dimension()) + ")");
  if (!check_convex_order(mu, nu).in_order)
    throw NotInConvexOrder("sinkhorn_msb: marginals are not in convex order");
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    if (!(relative_interior_margin(mu.atom(i), nu.atoms()) > kInteriorMargin))
      throw NotIrreducible("sinkhorn_msb: mu-atom " + std::to_string(i) +
                               " is not in the relative interior of conv(supp nu)",
                           i);

  const Eigen::Index n = mu.size();
  const Eigen::Index k = nu.size();
  const Eigen::Index d = mu.dimension();
  const Matrix dirs = detail::affine_directions(nu.atoms());

  PotentialTriple pot{Vector::Zero(n), Vector::Zero(k), Matrix::Zero(n, d)};
  Matrix cond(n, k);
  SolveReport rep;

  PotentialTriple best = pot;
  Matrix best_cond;
  double best_res = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= config.max_outer_iterations; ++it) {
    double mart = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector x = mu.atom(i);
      const Vector warm = pot.h.row(i).transpose();
      InnerSolution s = inner_dual_solve_unchecked(x, pot.psi, nu, dirs, config, &warm, i);
      pot.h.row(i) = s.h.transpose();
      pot.phi(i) = s.phi;
      cond.row(i) = s.conditional.transpose();
      mart = std::max(mart, (nu.atoms().transpose() * s.conditional - x).norm());
    }
    rep.dual_history.push_back(nu.weights().dot(pot.psi) + mu.weights().dot(pot.phi));
    const Vector col = cond.transpose() * mu.weights();
    const double marg = (col - nu.weights()).cwiseAbs().maxCoeff();
    rep.iterations = it;
    const double res = std::max(marg / config.marginal_tolerance, mart / config.martingale_tolerance);
    if (res < best_res) {
      best_res = res;
      best = pot;
      best_cond = cond;
      rep.marginal_residual = marg;
      rep.martingale_residual = mart;
    }
    if (marg < config.marginal_tolerance && mart < config.martingale_tolerance) {
      rep.converged = true;
      break;
    }
    // Column update: psi_j = -log sum_i mu_i exp(phi_i + h_i . (y_j - x_i)).
    for (Eigen::Index j = 0; j < k; ++j) {
      Vector terms(n);
      for (Eigen::Index i = 0; i < n; ++i)
        terms(i) = std::log(mu.weight(i)) + pot.phi(i) +
                   pot.h.row(i).dot(nu.atoms().row(j) - mu.atoms().row(i));
      pot.psi(j) = -detail::log_sum_exp(terms);
    }
  }

  rep.potentials = best;
  fix_gauge(rep.potentials, mu, nu);
  rep.coupling.weights = mu.weights().asDiagonal() * best_cond;
  rep.primal_value = primal_value(rep.coupling, mu, nu);
  rep.dual_value = dual_value(rep.potentials.psi, mu, nu, config);
  return rep;
}

// ---------------------------------------------------------------------------
// Classical Schrodinger system for the cost -x.y

struct SchrodingerResult {
  double value = 0.0;  // H(pi | mubar x nu) - int xbar . y dpi
  Coupling coupling;
  Vector phi_bar;
  Vector psi;
  int iterations = 0;
  double ss1_residual = 0.0;  // max_i |sum_j nu_j e^{phi_i + psi_j + xbar_i.y_j} - 1|
  double ss2_residual = 0.0;  // max_j |sum_i mubar_i e^{...} - 1|
};

inline SchrodingerResult classical_sinkhorn_sp(const DiscreteMeasure& mu_bar, const DiscreteMeasure& nu,
                                               double tolerance = 1e-13, int max_iterations = 200000) {
  if (mu_bar.dimension() != nu.dimension()) throw StructuralError("classical_sinkhorn_sp: dimension mismatch");
  const Eigen::Index n = mu_bar.size();
  const Eigen::Index k = nu.size();
  const Matrix gram = mu_bar.atoms() * nu.atoms().transpose();  // xbar_i . y_j
  const Vector log_mu = mu_bar.weights().array().log();
  const Vector log_nu = nu.weights().array().log();

  SchrodingerResult r;
  r.phi_bar = Vector::Zero(n);
  r.psi = Vector::Zero(k);

  auto ss1 = [&](Eigen::Index i) {
    Vector t = log_nu + r.psi + gram.row(i).transpose();
    return r.phi_bar(i) + detail::log_sum_exp(t);
  };
  auto ss2 = [&](Eigen::Index j) {
    Vector t = log_mu + r.phi_bar + gram.col(j);
    return r.psi(j) + detail::log_sum_exp(t);
  };

  bool done = false;
  for (int it = 1; it <= max_iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) r.phi_bar(i) -= ss1(i);
    for (Eigen::Index j = 0; j < k; ++j) r.psi(j) -= ss2(j);
    r.iterations = it;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) worst = std::max(worst, std::abs(std::expm1(ss1(i))));
    if (worst < tolerance) {
      done = true;
      break;
    }
  }
  // Split the additive constant evenly so neither potential drifts.
  const double shift = 0.5 * (mu_bar.weights().dot(r.phi_bar) - nu.weights().dot(r.psi));
  r.phi_bar.array() -= shift;
  r.psi.array() += shift;

  r.ss1_residual = 0.0;
  r.ss2_residual = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) r.ss1_residual = std::max(r.ss1_residual, std::abs(std::expm1(ss1(i))));
  for (Eigen::Index j = 0; j < k; ++j) r.ss2_residual = std::max(r.ss2_residual, std::abs(std::expm1(ss2(j))));

  r.coupling.weights = Matrix(n, k);
  double cross = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      r.coupling.weights(i, j) = std::exp(log_mu(i) + log_nu(j) + r.phi_bar(i) + r.psi(j) + gram(i, j));
      cross += r.coupling.weights(i, j) * gram(i, j);
    }
  r.value = relative_entropy(r.coupling, mu_bar, nu) - cross;
  if (!done)
    throw NotConverged("classical_sinkhorn_sp: residual " + std::to_string(r.ss1_residual) + " after " +
                       std::to_string(max_iterations) + " iterations");
  return r;
}

// SP(mubar, nu) + MCov(mubar, mu).
inline double vp_value(const DiscreteMeasure& mu_bar, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (mu_bar.dimension() != mu.dimension()) throw StructuralError("vp_value: dimension mismatch");
  return classical_sinkhorn_sp(mu_bar, nu).value + mcov_discrete(mu_bar, mu).value;
}

// Base measure h#mu: atoms h_i with weights mu_i. Coincident h-values are
// merged, which is reported through `warnings` when given.
inline DiscreteMeasure extract_base_measure(const SolveReport& report, const DiscreteMeasure& mu,
                                            std::vector<std::string>* warnings = nullptr) {
  if (!report.converged) throw NotConverged("extract_base_measure: report did not converge");
  if (report.potentials.h.rows() != mu.size()) throw StructuralError("extract_base_measure: shape mismatch");
  DiscreteMeasure base(report.potentials.h, mu.weights());
  if (base.size() < mu.size() && warnings)
    warnings->push_back("extract_base_measure: " + std::to_string(mu.size() - base.size()) +
                        " coincident h-values merged; the fitted h is not injective on supp(mu)");
  return base;
}

}  // namespace mbridge
