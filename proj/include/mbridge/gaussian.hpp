#pragma once

// Closed-form martingale Schrodinger bridge between N(b, S0) and N(b, S1).
// With D = S1 - S0 the optimizer is m(dx, dy) = mu(dx) N(x, D)(dy), the base
// measure is N(0, D^-1 S0 D^-1), and the Follmer martingale has volatility
// D((1-t)I + tD)^-1.

#include "mbridge/errors.hpp"
#include "mbridge/linalg.hpp"
#include "mbridge/measures.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace mbridge {

inline constexpr Eigen::Index kMaxGaussianDimension = 512;

struct GaussianMsb {
  Matrix sigma0;
  Matrix sigma1;
  Matrix delta;
  Matrix joint_covariance;  // [[S0, S0], [S0, S1]]
  double entropy_value = 0.0;
  Matrix base_covariance;   // D^-1 S0 D^-1
  Matrix h_matrix;          // h(x) = D^-1 x
  Matrix psi_quadratic;     // psi(y) = y^T A y / 2 with A = S1^-1 - D^-1
  Matrix phi_bar_quadratic; // phi_bar(xb) = -xb^T D xb / 2 + phi_bar_constant
  double phi_bar_constant = 0.0;
  // Common mean removed on ingestion; potentials below act on original
  // coordinates by subtracting it first.
  Vector shift;

  Eigen::Index dimension() const { return delta.rows(); }
  Vector h(const Vector& x) const { return h_matrix * (x - shift); }
  double psi(const Vector& y) const {
    const Vector c = y - shift;
    return 0.5 * c.dot(psi_quadratic * c);
  }
  double phi_bar(const Vector& xbar) const {
    return 0.5 * xbar.dot(phi_bar_quadratic * xbar) + phi_bar_constant;
  }
};

inline GaussianMsb gaussian_msb_closed_form(const Matrix& sigma0, const Matrix& sigma1) {
  const Eigen::Index d = sigma0.rows();
  if (sigma0.cols() != d || sigma1.rows() != d || sigma1.cols() != d)
    throw StructuralError("gaussian: covariance shapes differ");
  if (d == 0 || d > kMaxGaussianDimension)
    throw StructuralError("gaussian: dimension must be in [1, " + std::to_string(kMaxGaussianDimension) + "]");
  const auto e0 = linalg::require_spd(sigma0, "sigma0");
  const auto e1 = linalg::require_spd(sigma1, "sigma1");
  GaussianMsb g;
  g.sigma0 = sigma0;
  g.sigma1 = sigma1;
  g.delta = sigma1 - sigma0;
  const auto ed = linalg::require_spd<NotInConvexOrder>(g.delta, "sigma1 - sigma0");
  const Matrix delta_inv = linalg::inverse_spd(ed);

  g.joint_covariance.resize(2 * d, 2 * d);
  g.joint_covariance << sigma0, sigma0, sigma0, sigma1;
  const double log_ratio = linalg::logdet_spd(e1) - linalg::logdet_spd(ed);
  g.entropy_value = 0.5 * log_ratio;
  g.base_covariance = delta_inv * sigma0 * delta_inv;
  g.base_covariance = 0.5 * (g.base_covariance + g.base_covariance.transpose());
  g.h_matrix = delta_inv;
  g.psi_quadratic = linalg::inverse_spd(e1) - delta_inv;
  g.phi_bar_quadratic = -g.delta;
  g.phi_bar_constant = 0.5 * log_ratio;
  g.shift = Vector::Zero(d);
  (void)e0;
  return g;
}

// Equal means are required for convex order; the mean is translated away and
// recorded in `shift`.
inline GaussianMsb gaussian_msb_closed_form(const GaussianSpec& mu, const GaussianSpec& nu) {
  if (mu.dimension() != nu.dimension()) throw StructuralError("gaussian: dimension mismatch");
  const double scale = 1.0 + std::max(mu.mean.cwiseAbs().maxCoeff(), nu.mean.cwiseAbs().maxCoeff());
  if ((mu.mean - nu.mean).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw NotInConvexOrder("gaussian: means differ, so the marginals are not in convex order");
  GaussianMsb g = gaussian_msb_closed_form(mu.covariance, nu.covariance);
  g.shift = mu.mean;
  return g;
}

inline Matrix follmer_volatility_gaussian(const Matrix& delta, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw StructuralError("follmer_volatility_gaussian: t outside [0, 1]");
  const Eigen::Index d = delta.rows();
  const Matrix a = (1.0 - t) * Matrix::Identity(d, d) + t * delta;
  // delta and a commute, so delta * a^-1 = a^-1 * delta; symmetrize the
  // round-off away.
  const Matrix s = a.ldlt().solve(delta);
  return 0.5 * (s + s.transpose());
}

// H(N(x, D) | N(x, I)) = (tr D - d - log det D) / 2.
inline double energy_closed_form(const Matrix& delta) {
  const auto e = linalg::require_spd<NotInConvexOrder>(delta, "delta");
  return 0.5 * (delta.trace() - static_cast<double>(delta.rows()) - linalg::logdet_spd(e));
}

namespace detail {

inline constexpr double kQuadratureCutoff = 1e-8;

template <class F>
double tanh_sinh_integrate(F&& f, double target) {
  boost::math::quadrature::tanh_sinh<double> q;
  double err = 0.0;
  double l1 = 0.0;
  const double v = q.integrate(f, 0.0, 1.0 - kQuadratureCutoff, target, &err, &l1);
  if (!(err <= 100.0 * target * std::max(1.0, l1)) || !std::isfinite(v))
    throw NumericalError("tanh-sinh quadrature did not reach " + std::to_string(target), err);
  return v;
}

}  // namespace detail

// (1/2) int_0^1 |sigma_t - I|_HS^2 / (1 - t) dt for the Gaussian Follmer
// volatility, integrated on the matrix path. The integrand vanishes like
// (1 - t) at the right end; the short tail past 1 - 1e-8 is added back per
// eigenvalue with a midpoint rule, whose error there is O(1e-24).
inline double weighted_energy_quadrature(const Matrix& delta) {
  const auto e = linalg::require_spd<NotInConvexOrder>(delta, "delta");
  const Eigen::Index d = delta.rows();
  const Matrix id = Matrix::Identity(d, d);
  auto integrand = [&](double t) {
    const Matrix diff = follmer_volatility_gaussian(delta, t) - id;
    return 0.5 * diff.squaredNorm() / (1.0 - t);
  };
  const double body = detail::tanh_sinh_integrate(integrand, 1e-13);
  // Per-eigenvalue integrand: (l - 1)^2 (1 - t) / (1 - t + t l)^2 / 2.
  const double c = detail::kQuadratureCutoff;
  double tail = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double l = e.values(k);
    if (std::abs(l - 1.0) < 1e-15) continue;
    const double tm = 1.0 - 0.5 * c;
    const double den = 1.0 - tm + tm * l;
    tail += 0.5 * c * (l - 1.0) * (l - 1.0) * (1.0 - tm) / (den * den);
  }
  return body + tail;
}

// int_0^1 sigma_t sigma_t^T dt entrywise; must reproduce D.
inline Matrix volatility_variance_budget(const Matrix& delta) {
  linalg::require_spd<NotInConvexOrder>(delta, "delta");
  const Eigen::Index d = delta.rows();
  Matrix out(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = r; c < d; ++c) {
      auto f = [&](double t) {
        const Matrix s = follmer_volatility_gaussian(delta, t);
        return (s * s.transpose())(r, c);
      };
      boost::math::quadrature::tanh_sinh<double> q;
      double err = 0.0;
      out(r, c) = out(c, r) = q.integrate(f, 0.0, 1.0, 1e-13, &err);
      if (!(err < 1e-10)) throw NumericalError("variance budget quadrature", err);
    }
  return out;
}

// tau(t) = t l / (1 - t + t l): the Bass clock that matches the Follmer
// covariance along the eigendirection with eigenvalue l.
inline double spectral_time_change(double lambda, double t) { return t * lambda / (1.0 - t + t * lambda); }

struct BassComparison {
  Matrix bass_volatility;  // D^{1/2}
  Vector eigenvalues;
  Matrix eigenvectors;
  std::vector<double> grid;
  Matrix follmer_schedule;  // grid x d: Cov(N_t - N_0)_kk of the Follmer martingale
  Matrix bass_schedule;     // grid x d: tau_k(t) l_k
  double max_discrepancy = 0.0;
};

// The Follmer schedule is computed from the conditional law: with
// Y | X_t Gaussian, Cov(E[Y | X_t] - x) = D - (D^-1 + t/(1-t) I)^-1, read in
// the eigenbasis of D. The Bass side uses the clock tau_k.
inline BassComparison bass_comparison_gaussian(const Matrix& sigma0, const Matrix& sigma1, int grid_points = 101) {
  if (grid_points < 2) throw StructuralError("bass_comparison_gaussian: need at least two grid points");
  const GaussianMsb g = gaussian_msb_closed_form(sigma0, sigma1);
  const auto e = linalg::sym_eigen(g.delta);
  const Eigen::Index d = g.dimension();
  BassComparison out;
  out.bass_volatility = linalg::sqrtm_spd(e);
  out.eigenvalues = e.values;
  out.eigenvectors = e.vectors;
  out.follmer_schedule.resize(grid_points, d);
  out.bass_schedule.resize(grid_points, d);
  const Matrix delta_inv = linalg::inverse_spd(e);
  for (int k = 0; k < grid_points; ++k) {
    const double t = static_cast<double>(k) / (grid_points - 1);
    out.grid.push_back(t);
    Matrix cov;
    if (t >= 1.0) {
      cov = g.delta;
    } else {
      const Matrix post = (delta_inv + (t / (1.0 - t)) * Matrix::Identity(d, d)).inverse();
      cov = g.delta - post;
    }
    const Matrix rotated = e.vectors.transpose() * cov * e.vectors;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double l = e.values(c);
      out.follmer_schedule(k, c) = rotated(c, c);
      out.bass_schedule(k, c) = spectral_time_change(l, t) * l;
      out.max_discrepancy =
          std::max(out.max_discrepancy, std::abs(out.follmer_schedule(k, c) - out.bass_schedule(k, c)));
    }
  }
  return out;
}

// Conditional law of Y given xbar under the classical Schrodinger coupling
// of (N(0, base), N(0, S1)) built from the closed-form potentials:
// density proportional to N(0, S1)(y) exp(psi(y) + xbar . y).
struct GaussianConditional {
  Vector mean;
  Matrix covariance;
  // log of e^{phi_bar(xbar)} int e^{psi(y) + xbar.y} N(0,S1)(dy); zero when
  // the potentials solve the Schrodinger system.
  double log_normalization = 0.0;
};

inline GaussianConditional schrodinger_conditional(const GaussianMsb& g, const Vector& xbar) {
  const auto e1 = linalg::sym_eigen(g.sigma1);
  const Matrix precision = linalg::inverse_spd(e1) - g.psi_quadratic;
  const auto ep = linalg::require_spd(precision, "conditional precision");
  GaussianConditional c;
  c.covariance = linalg::inverse_spd(ep);
  c.mean = c.covariance * xbar;
  c.log_normalization = g.phi_bar(xbar) - 0.5 * linalg::logdet_spd(e1) - 0.5 * linalg::logdet_spd(ep) +
                        0.5 * xbar.dot(c.mean);
  return c;
}

}  // namespace mbridge
