#pragma once

// Dense two-phase primal simplex for small linear programs in standard form
//
//     minimize c^T x   subject to   A x = b,  x >= 0.
//
// Sized for desk-scale problems (a few thousand columns, a few hundred rows).
// Dantzig pricing with a switch to Bland's rule once degenerate pivots start
// to repeat; the final basic solution is re-solved against the original
// columns so that equality residuals sit at round-off level.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace mbridge::lp {

enum class Status { optimal, infeasible, unbounded, iteration_limit };

struct Result {
  Status status = Status::infeasible;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::size_t pivots = 0;
};

struct Options {
  double pivot_tolerance = 1e-11;
  double feasibility_tolerance = 1e-9;
  std::size_t max_pivots = 200000;
};

namespace detail {

class Tableau {
 public:
  Tableau(Eigen::Index rows, Eigen::Index cols) : t_(rows + 1, cols + 1) {
    t_.setZero();
  }

  double& at(Eigen::Index r, Eigen::Index c) { return t_(r, c); }
  double at(Eigen::Index r, Eigen::Index c) const { return t_(r, c); }
  Eigen::Index rows() const { return t_.rows() - 1; }
  Eigen::Index cols() const { return t_.cols() - 1; }
  double rhs(Eigen::Index r) const { return t_(r, t_.cols() - 1); }
  double& rhs(Eigen::Index r) { return t_(r, t_.cols() - 1); }
  // Objective row is the last row; stores reduced costs and -z.
  Eigen::Index obj() const { return t_.rows() - 1; }

  void pivot(Eigen::Index pr, Eigen::Index pc) {
    const double inv = 1.0 / t_(pr, pc);
    t_.row(pr) *= inv;
    t_(pr, pc) = 1.0;
    for (Eigen::Index r = 0; r < t_.rows(); ++r) {
      if (r == pr) continue;
      const double f = t_(r, pc);
      if (f != 0.0) {
        t_.row(r) -= f * t_.row(pr);
        t_(r, pc) = 0.0;
      }
    }
  }

  void drop_row(Eigen::Index r) {
    const Eigen::Index n = t_.rows();
    if (r < n - 1) t_.block(r, 0, n - 1 - r, t_.cols()) = t_.block(r + 1, 0, n - 1 - r, t_.cols()).eval();
    t_.conservativeResize(n - 1, Eigen::NoChange);
  }

 private:
  Eigen::MatrixXd t_;
};

// Runs simplex iterations on the tableau restricted to columns [0, active).
// Returns optimal / unbounded / iteration_limit.
inline Status iterate(Tableau& tab, std::vector<Eigen::Index>& basis,
                      Eigen::Index active, const Options& opt,
                      std::size_t& pivots) {
  std::size_t degenerate_run = 0;
  for (;;) {
    if (pivots >= opt.max_pivots) return Status::iteration_limit;
    const bool bland = degenerate_run > 50;
    Eigen::Index enter = -1;
    double best = -opt.pivot_tolerance;
    for (Eigen::Index c = 0; c < active; ++c) {
      const double rc = tab.at(tab.obj(), c);
      if (rc < best) {
        enter = c;
        if (bland) break;
        best = rc;
      }
    }
    if (enter < 0) return Status::optimal;

    Eigen::Index leave = -1;
    double ratio = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < tab.rows(); ++r) {
      const double a = tab.at(r, enter);
      if (a > opt.pivot_tolerance) {
        const double q = tab.rhs(r) / a;
        if (q < ratio - 1e-14 ||
            (std::abs(q - ratio) <= 1e-14 && leave >= 0 && basis[r] < basis[leave])) {
          ratio = q;
          leave = r;
        }
      }
    }
    if (leave < 0) return Status::unbounded;
    degenerate_run = (ratio <= 1e-14) ? degenerate_run + 1 : 0;
    tab.pivot(leave, enter);
    basis[leave] = enter;
    ++pivots;
  }
}

}  // namespace detail

inline Result solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                    const Eigen::VectorXd& c, const Options& opt = {}) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  Result res;
  res.x = Eigen::VectorXd::Zero(n);

  detail::Tableau tab(m, n + m);
  std::vector<Eigen::Index> basis(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double sign = b(r) < 0 ? -1.0 : 1.0;
    for (Eigen::Index j = 0; j < n; ++j) tab.at(r, j) = sign * A(r, j);
    tab.at(r, n + r) = 1.0;
    tab.rhs(r) = sign * b(r);
    basis[r] = n + r;
  }
  // Phase one: minimize the sum of artificials.
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index j = 0; j < n; ++j) tab.at(tab.obj(), j) -= tab.at(r, j);
    tab.rhs(tab.obj()) -= tab.rhs(r);
  }
  Status st = detail::iterate(tab, basis, n + m, opt, res.pivots);
  if (st == Status::iteration_limit) {
    res.status = st;
    return res;
  }
  const double bscale = 1.0 + b.cwiseAbs().maxCoeff();
  if (-tab.rhs(tab.obj()) > opt.feasibility_tolerance * bscale) {
    res.status = Status::infeasible;
    return res;
  }

  // Drive remaining artificials out of the basis; drop redundant rows.
  for (Eigen::Index r = 0; r < tab.rows();) {
    if (basis[r] < n) {
      ++r;
      continue;
    }
    Eigen::Index col = -1;
    double best = 1e-9;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(tab.at(r, j)) > best) {
        best = std::abs(tab.at(r, j));
        col = j;
      }
    }
    if (col >= 0) {
      tab.pivot(r, col);
      basis[r] = col;
      ++r;
    } else {
      tab.drop_row(r);
      basis.erase(basis.begin() + r);
    }
  }

  // Phase two objective row.
  for (Eigen::Index j = 0; j < tab.cols(); ++j) tab.at(tab.obj(), j) = 0.0;
  tab.rhs(tab.obj()) = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) tab.at(tab.obj(), j) = c(j);
  for (Eigen::Index r = 0; r < tab.rows(); ++r) {
    const double cb = c(basis[r]);
    if (cb == 0.0) continue;
    for (Eigen::Index j = 0; j < n; ++j) tab.at(tab.obj(), j) -= cb * tab.at(r, j);
    tab.rhs(tab.obj()) -= cb * tab.rhs(r);
  }
  st = detail::iterate(tab, basis, n, opt, res.pivots);
  if (st != Status::optimal) {
    res.status = st;
    return res;
  }

  // Polish: re-solve the basic system on the original (row-reduced) data.
  const auto k = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd B(m, k);
  for (Eigen::Index i = 0; i < k; ++i) B.col(i) = A.col(basis[i]);
  Eigen::VectorXd xb = B.colPivHouseholderQr().solve(b);
  for (Eigen::Index i = 0; i < k; ++i) res.x(basis[i]) = std::max(0.0, xb(i));
  // Fall back to the tableau values if polishing made things worse.
  Eigen::VectorXd xt = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < k; ++i) xt(basis[i]) = std::max(0.0, tab.rhs(i));
  if ((A * xt - b).cwiseAbs().maxCoeff() < (A * res.x - b).cwiseAbs().maxCoeff()) res.x = xt;

  res.objective = c.dot(res.x);
  res.status = Status::optimal;
  return res;
}

}  // namespace mbridge::lp
