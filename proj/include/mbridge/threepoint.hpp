#pragma once

// Three-point marginals: mu on (-1, 0, 1), nu on (-2, 0, 2). Every martingale
// coupling is fixed by two numbers (u, v):
//
//     [ u   3p1/2 - 2u   u - p1/2 ]
//     [ v   q1 - 2v      v        ]      w = p2 - u - v
//     [ w   r1/2 - 2w    w + r1/2 ]
//
// which makes the entropic and the Bass-type (quantile W2 to N(0,1)) problems
// two-dimensional and directly comparable.

#include "mbridge/errors.hpp"
#include "mbridge/lp.hpp"
#include "mbridge/measures.hpp"
#include "mbridge/normal.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mbridge {

struct ThreePointInstance {
  double p1 = 0, q1 = 0, r1 = 0;  // mu weights on -1, 0, 1
  double p2 = 0, q2 = 0, r2 = 0;  // nu weights on -2, 0, 2

  // r1 and r2 are the remainders; the instance is validated.
  static ThreePointInstance from_free(double p1, double q1, double p2, double q2) {
    ThreePointInstance t{p1, q1, 1.0 - p1 - q1, p2, q2, 1.0 - p2 - q2};
    t.validate();
    return t;
  }

  DiscreteMeasure mu() const { return DiscreteMeasure::line({-1, 0, 1}, {p1, q1, r1}); }
  DiscreteMeasure nu() const { return DiscreteMeasure::line({-2, 0, 2}, {p2, q2, r2}); }

  void validate() const;
};

// Feasible polygon S as a . (u, v) <= b.
struct ThreePointConstraint {
  std::array<double, 2> a;
  double b;
  const char* name;
};

inline std::array<ThreePointConstraint, 6> feasible_polygon(const ThreePointInstance& t) {
  return {{{{-1, 0}, -t.p1 / 2, "u >= p1/2 (entry (-1, 2) nonnegative)"},
           {{1, 0}, 3 * t.p1 / 4, "u <= 3p1/4 (entry (-1, 0) nonnegative)"},
           {{0, -1}, 0.0, "v >= 0 (entries (0, -2) and (0, 2) nonnegative)"},
           {{0, 1}, t.q1 / 2, "v <= q1/2 (entry (0, 0) nonnegative)"},
           {{1, 1}, t.p2, "u + v <= p2 (w nonnegative)"},
           {{-1, -1}, t.r1 / 4 - t.p2, "u + v >= p2 - r1/4 (entry (1, 0) nonnegative)"}}};
}

namespace detail {

// Largest slack-free ball inside S: (center, radius). Radius < 0 when empty.
inline std::pair<Eigen::Vector2d, double> polygon_chebyshev_center(const ThreePointInstance& t) {
  const auto cons = feasible_polygon(t);
  // Variables (u, v, r, s_1..s_6) >= 0; u and v are nonnegative on S anyway.
  Matrix A = Matrix::Zero(6, 9);
  Vector b(6), c = Vector::Zero(9);
  for (int k = 0; k < 6; ++k) {
    A(k, 0) = cons[k].a[0];
    A(k, 1) = cons[k].a[1];
    A(k, 2) = std::hypot(cons[k].a[0], cons[k].a[1]);
    A(k, 3 + k) = 1.0;
    b(k) = cons[k].b;
  }
  c(2) = -1.0;
  lp::Options opt;
  opt.feasibility_tolerance = 1e-13;
  const lp::Result res = lp::solve(A, b, c, opt);
  if (res.status != lp::Status::optimal) return {Eigen::Vector2d::Zero(), -1.0};
  return {Eigen::Vector2d(res.x(0), res.x(1)), res.x(2)};
}

}  // namespace detail

inline void ThreePointInstance::validate() const {
  const double w[6] = {p1, q1, r1, p2, q2, r2};
  for (double x : w)
    if (!(x > 0.0) || !std::isfinite(x)) throw StructuralError("threepoint: every weight must be positive");
  if (std::abs(p1 + q1 + r1 - 1.0) > 1e-12 || std::abs(p2 + q2 + r2 - 1.0) > 1e-12)
    throw StructuralError("threepoint: weights must sum to one");
  if (std::abs((r1 - p1) - 2.0 * (r2 - p2)) > 1e-12)
    throw NotInConvexOrder("threepoint: means differ (" + std::to_string(r1 - p1) + " vs " +
                           std::to_string(2.0 * (r2 - p2)) + ")");
  // Interval check: for each admissible u, v must meet both boxes.
  const double vlo = std::max(0.0, p2 - r1 / 4 - 3 * p1 / 4);
  const double vhi = std::min(q1 / 2, p2 - p1 / 2);
  if (vlo > vhi + 1e-15)
    throw NotInConvexOrder("threepoint: no martingale coupling (feasible polygon is empty)");
}

inline Matrix parametrize_coupling(const ThreePointInstance& t, double u, double v, double slack = 1e-13) {
  for (const auto& c : feasible_polygon(t))
    if (c.a[0] * u + c.a[1] * v > c.b + slack)
      throw InfeasibleParameters("threepoint: (u, v) = (" + std::to_string(u) + ", " + std::to_string(v) +
                                 ") violates " + c.name);
  const double w = t.p2 - u - v;
  Matrix m(3, 3);
  m << u, 1.5 * t.p1 - 2 * u, u - t.p1 / 2, v, t.q1 - 2 * v, v, w, t.r1 / 2 - 2 * w, w + t.r1 / 2;
  return m;
}

// (u, v) read off a coupling matrix.
inline Eigen::Vector2d coupling_parameters(const Matrix& m) { return {m(0, 0), m(1, 0)}; }

// --------------------------------------------------------------------------
// W2 to the standard Gaussian

// W2^2(p, N(0, 1)) for a one-dimensional discrete p, through the quantile
// coupling: the j-th atom receives the Gaussian mass between the quantiles of
// F_{j-1} and F_j, and int_a^b g dN = phi(a) - phi(b).
inline double w2_to_standard_gaussian(const DiscreteMeasure& p) {
  if (p.dimension() != 1) throw StructuralError("w2_to_standard_gaussian: measure must be one-dimensional");
  std::vector<std::pair<double, double>> at;
  for (Eigen::Index j = 0; j < p.size(); ++j) at.emplace_back(p.atoms()(j, 0), p.weight(j));
  std::sort(at.begin(), at.end());
  auto g = [](double f) { return f <= 0.0 || f >= 1.0 ? 0.0 : normal::pdf(normal::quantile(f)); };
  double m2 = 0.0, cross = 0.0, f_prev = 0.0;
  for (std::size_t j = 0; j < at.size(); ++j) {
    const double f = j + 1 == at.size() ? 1.0 : f_prev + at[j].second;
    m2 += at[j].second * at[j].first * at[j].first;
    cross += at[j].first * (g(f_prev) - g(f));
    f_prev = f;
  }
  return m2 + 1.0 - 2.0 * cross;
}

// --------------------------------------------------------------------------
// Objectives

struct ThreePointSolution {
  double u = 0, v = 0;
  Matrix coupling;
  double value = 0.0;  // H(pi | mu x nu) or sum_x mu_x W2^2(pi_x / mu_x, N(0, 1))
  // First-order system residuals at (u, v), one per equation.
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  int iterations = 0;
  bool boundary = false;
  std::vector<std::string> vanishing_entries;
};

namespace detail {

struct Objective2d {
  double value;
  Eigen::Vector2d grad;
  Eigen::Matrix2d hess;
};

inline const char* kEntryNames[3][3] = {{"(-1,-2)", "(-1,0)", "(-1,2)"},
                                        {"(0,-2)", "(0,0)", "(0,2)"},
                                        {"(1,-2)", "(1,0)", "(1,2)"}};

// d pi / du and d pi / dv, entrywise.
inline std::pair<Matrix, Matrix> coupling_jacobian() {
  Matrix du(3, 3), dv(3, 3);
  du << 1, -2, 1, 0, 0, 0, -1, 2, -1;
  dv << 0, 0, 0, 1, -2, 1, -1, 2, -1;
  return {du, dv};
}

// Sum pi log pi with exact gradient and Hessian.
inline Objective2d entropy_objective(const ThreePointInstance& t, double u, double v) {
  const Matrix m = parametrize_coupling(t, u, v, 0.0);
  const auto [du, dv] = coupling_jacobian();
  Objective2d o{0.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()};
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double p = m(i, j);
      if (!(p > 0.0)) return {std::numeric_limits<double>::infinity(), {}, {}};
      const Eigen::Vector2d d(du(i, j), dv(i, j));
      o.value += p * std::log(p);
      o.grad += std::log(p) * d;
      o.hess += d * d.transpose() / p;
    }
  return o;
}

inline double bass_value(const ThreePointInstance& t, const Matrix& m) {
  const Vector mu_w = t.mu().weights();
  double g = 0.0;
  for (Eigen::Index i = 0; i < 3; ++i) {
    std::vector<double> atoms, w;
    for (Eigen::Index j = 0; j < 3; ++j)
      if (m(i, j) > 0.0) {
        atoms.push_back(-2.0 + 2.0 * static_cast<double>(j));
        w.push_back(m(i, j) / m.row(i).sum());
      }
    double s = 0.0;
    for (double x : w) s += x;
    for (double& x : w) x /= s;
    g += mu_w(i) * w2_to_standard_gaussian(DiscreteMeasure::line(atoms, w));
  }
  return g;
}

// Per-row derivative of mu_x W2^2 with respect to the free entry a of that
// row, whose conditional CDF values are (a/m, c - a/m):
// 8 + 4 (Phi^-1(a/m) - Phi^-1(c - a/m)).
inline double bass_row_slope(double a, double mass, double c) {
  return 8.0 + 4.0 * (normal::quantile(a / mass) - normal::quantile(c - a / mass));
}
inline double bass_row_curvature(double a, double mass, double c) {
  return 4.0 / mass *
         (1.0 / normal::pdf(normal::quantile(a / mass)) + 1.0 / normal::pdf(normal::quantile(c - a / mass)));
}

inline Eigen::Vector2d bass_gradient(const ThreePointInstance& t, double u, double v) {
  const double w = t.p2 - u - v;
  const double cw = bass_row_slope(w, t.r1, 0.5);
  return {bass_row_slope(u, t.p1, 1.5) - cw, bass_row_slope(v, t.q1, 1.0) - cw};
}

inline Eigen::Matrix2d bass_jacobian(const ThreePointInstance& t, double u, double v) {
  const double w = t.p2 - u - v;
  const double kw = bass_row_curvature(w, t.r1, 0.5);
  Eigen::Matrix2d j;
  j << bass_row_curvature(u, t.p1, 1.5) + kw, kw, kw, bass_row_curvature(v, t.q1, 1.0) + kw;
  return j;
}

inline bool strictly_inside(const ThreePointInstance& t, const Eigen::Vector2d& z) {
  for (const auto& c : feasible_polygon(t))
    if (!(c.a[0] * z(0) + c.a[1] * z(1) < c.b)) return false;
  return true;
}

inline void mark_vanishing(ThreePointSolution& s) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(s.coupling(i, j)) <= 1e-14) s.vanishing_entries.emplace_back(kEntryNames[i][j]);
  s.boundary = !s.vanishing_entries.empty();
}

// Damped Newton from the Chebyshev center; steps are halved until they stay
// strictly inside S and decrease the objective. Returns false if S has empty
// interior, in which case `z` is its single point.
template <class Eval>
bool interior_newton(const ThreePointInstance& t, Eval&& eval, Eigen::Vector2d& z, int& iterations,
                     double grad_tol) {
  const auto [center, radius] = polygon_chebyshev_center(t);
  if (radius < 0.0) throw NotInConvexOrder("threepoint: feasible polygon is empty");
  z = center;
  if (radius < 1e-13) return false;
  Objective2d cur = eval(z);
  for (iterations = 0; iterations < 200; ++iterations) {
    if (cur.grad.lpNorm<Eigen::Infinity>() < grad_tol) return true;
    Eigen::Vector2d step = -cur.hess.ldlt().solve(cur.grad);
    if (!step.allFinite() || cur.grad.dot(step) >= 0.0) step = -cur.grad;
    if (step.lpNorm<Eigen::Infinity>() < 1e-16) return true;
    double a = 1.0;
    bool moved = false;
    for (int k = 0; k < 80; ++k, a *= 0.5) {
      const Eigen::Vector2d trial = z + a * step;
      if (!strictly_inside(t, trial)) continue;
      const Objective2d next = eval(trial);
      if (next.value <= cur.value + 1e-4 * a * cur.grad.dot(step) + 1e-15 * std::abs(cur.value)) {
        z = trial;
        cur = next;
        moved = true;
        break;
      }
    }
    if (!moved) return true;  // at round-off level; the residual reports the rest
  }
  throw NotConverged("threepoint: Newton did not converge in 200 steps");
}

}  // namespace detail

// u(2u - p1)(r1 - 4w)^2 - (3p1 - 4u)^2 w(r1 + 2w) and
// v^2 (r1 - 4w)^2 - 2 (q1 - 2v)^2 w (r1 + 2w).
inline Eigen::Vector2d entropy_system_residual(const ThreePointInstance& t, double u, double v) {
  const double w = t.p2 - u - v;
  const double a = (t.r1 - 4 * w) * (t.r1 - 4 * w);
  const double b = w * (t.r1 + 2 * w);
  return {u * (2 * u - t.p1) * a - (3 * t.p1 - 4 * u) * (3 * t.p1 - 4 * u) * b,
          v * v * a - 2 * (t.q1 - 2 * v) * (t.q1 - 2 * v) * b};
}

// The same conditions before clearing denominators: the gradient of
// sum pi log pi, i.e. log of the ratio of the two sides above.
inline Eigen::Vector2d entropy_gradient(const ThreePointInstance& t, double u, double v) {
  return detail::entropy_objective(t, u, v).grad;
}

// Phi^-1(u/p1) - Phi^-1(3/2 - u/p1) - [Phi^-1(w/r1) - Phi^-1(1/2 - w/r1)] and
// the same with Phi^-1(v/q1) - Phi^-1(1 - v/q1).
inline Eigen::Vector2d bass_system_residual(const ThreePointInstance& t, double u, double v) {
  return detail::bass_gradient(t, u, v) / 4.0;
}

inline ThreePointSolution entropy_minimize(const ThreePointInstance& t) {
  t.validate();
  ThreePointSolution s;
  Eigen::Vector2d z;
  auto eval = [&](const Eigen::Vector2d& p) { return detail::entropy_objective(t, p(0), p(1)); };
  detail::interior_newton(t, eval, z, s.iterations, 1e-14);
  s.u = z(0);
  s.v = z(1);
  s.coupling = parametrize_coupling(t, s.u, s.v);
  s.value = relative_entropy(Coupling{s.coupling}, t.mu(), t.nu());
  detail::mark_vanishing(s);
  s.residual = entropy_system_residual(t, s.u, s.v);
  return s;
}

// Minimizes G directly, with the Hessian from central differences of the
// exact gradient.
inline ThreePointSolution bass_minimize(const ThreePointInstance& t) {
  t.validate();
  ThreePointSolution s;
  Eigen::Vector2d z;
  auto eval = [&](const Eigen::Vector2d& p) {
    detail::Objective2d o;
    o.value = detail::bass_value(t, parametrize_coupling(t, p(0), p(1), 0.0));
    o.grad = detail::bass_gradient(t, p(0), p(1));
    const double h = 1e-7 * std::max(1e-3, std::min({t.p1, t.q1, t.r1}));
    for (int k = 0; k < 2; ++k) {
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e(k) = h;
      if (detail::strictly_inside(t, p + e) && detail::strictly_inside(t, p - e))
        o.hess.col(k) = (detail::bass_gradient(t, p(0) + e(0), p(1) + e(1)) -
                         detail::bass_gradient(t, p(0) - e(0), p(1) - e(1))) / (2 * h);
      else
        o.hess.col(k) = detail::bass_jacobian(t, p(0), p(1)).col(k);
    }
    o.hess = 0.5 * (o.hess + o.hess.transpose()).eval();
    return o;
  };
  detail::interior_newton(t, eval, z, s.iterations, 1e-11);
  s.u = z(0);
  s.v = z(1);
  s.coupling = parametrize_coupling(t, s.u, s.v);
  s.value = detail::bass_value(t, s.coupling);
  detail::mark_vanishing(s);
  s.residual = bass_system_residual(t, s.u, s.v);
  return s;
}

// Newton on the Bass first-order system itself, with the exact Jacobian.
inline Eigen::Vector2d solve_bass_system(const ThreePointInstance& t, Eigen::Vector2d z) {
  for (int it = 0; it < 100; ++it) {
    const Eigen::Vector2d f = detail::bass_gradient(t, z(0), z(1));
    if (f.lpNorm<Eigen::Infinity>() < 1e-13) return z;
    const Eigen::Vector2d step = -detail::bass_jacobian(t, z(0), z(1)).ldlt().solve(f);
    double a = 1.0;
    while (!detail::strictly_inside(t, z + a * step) && a > 1e-12) a *= 0.5;
    z += a * step;
  }
  const Eigen::Vector2d f = detail::bass_gradient(t, z(0), z(1));
  if (f.lpNorm<Eigen::Infinity>() < 1e-10) return z;
  throw NotConverged("threepoint: Newton on the Bass system did not converge");
}

}  // namespace mbridge
