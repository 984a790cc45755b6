#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include "mbridge/measures.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace testing_support {

using mbridge::Coupling;
using mbridge::DiscreteMeasure;
using mbridge::Matrix;
using mbridge::Vector;

// Plain golden-section search for a unimodal function on [lo, hi].
inline double golden_section(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-13) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

inline double plain_entropy(const Matrix& m, const Vector& mu, const Vector& nu) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (m(i, j) > 0) h += m(i, j) * std::log(m(i, j) / (mu(i) * nu(j)));
  return h;
}

// mu = 1/2 (delta_-1 + delta_1), nu = (0.3, 0.4, 0.3) on (-2, 0, 2).
struct TwoByThree {
  DiscreteMeasure mu = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  DiscreteMeasure nu = DiscreteMeasure::line({-2, 0, 2}, {0.3, 0.4, 0.3});

  static Matrix coupling(double a) {
    Matrix m(2, 3);
    m << a, 0.75 - 2 * a, a - 0.25, 0.3 - a, 2 * a - 0.35, 0.55 - a;
    return m;
  }
  Matrix oracle() const {
    const double a = golden_section(
        [&](double t) { return plain_entropy(coupling(t), mu.weights(), nu.weights()); }, 0.25, 0.3);
    return coupling(a);
  }
};

// Three-point marginals of the worked example.
inline DiscreteMeasure worked_mu() { return DiscreteMeasure::line({-1, 0, 1}, {0.40, 0.46, 0.14}); }
inline DiscreteMeasure worked_nu() { return DiscreteMeasure::line({-2, 0, 2}, {0.43, 0.27, 0.30}); }

inline Matrix worked_entropy_matrix() {
  Matrix m(3, 3);
  m << 0.25123, 0.09755, 0.05123, 0.16085, 0.13831, 0.16085, 0.01793, 0.03414, 0.08793;
  return m;
}
inline Matrix worked_bass_matrix() {
  Matrix m(3, 3);
  m << 0.25229, 0.09543, 0.05229, 0.15941, 0.14117, 0.15941, 0.01830, 0.03340, 0.08830;
  return m;
}

// A random irreducible pair (mu, nu) in convex order: pick nu-atoms and a
// strictly positive kernel K, then set nu = mu K and x_i = sum_j K_ij y_j.
// Every x_i is then a strictly positive combination of all nu-atoms.
inline std::pair<DiscreteMeasure, DiscreteMeasure> random_feasible_instance(std::mt19937_64& rng, int d, int n,
                                                                            int k) {
  std::uniform_real_distribution<double> loc(-2.0, 2.0), pos(0.2, 1.0);
  Matrix y(k, d);
  for (auto& v : y.reshaped()) v = loc(rng);
  Vector mu_w(n);
  for (auto& v : mu_w) v = pos(rng);
  mu_w /= mu_w.sum();
  Matrix kernel(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) kernel(i, j) = pos(rng);
    kernel.row(i) /= kernel.row(i).sum();
  }
  Vector nu_w = kernel.transpose() * mu_w;
  nu_w /= nu_w.sum();
  const Matrix x = kernel * y;
  return {DiscreteMeasure(x, mu_w), DiscreteMeasure(y, nu_w)};
}

}  // namespace testing_support
