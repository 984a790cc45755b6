#include "mbridge/msb_solver.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mbridge;
using namespace testing_support;

namespace {

double bisect(double (*f)(double), double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(InnerDual, SymmetricCase) {
  const auto nu = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  const auto s = inner_dual_solve(Vector::Zero(1), Vector::Zero(2), nu);
  EXPECT_NEAR(s.h(0), 0.0, 1e-14);
  EXPECT_NEAR(s.conditional(0), 0.5, 1e-14);
  EXPECT_NEAR(s.phi, 0.0, 1e-14);
}

TEST(InnerDual, TanhRoot) {
  const auto nu = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  const auto s = inner_dual_solve(Vector::Constant(1, 0.5), Vector::Zero(2), nu);
  const double oracle = bisect([](double h) { return std::tanh(h) - 0.5; }, 0.0, 5.0);
  EXPECT_NEAR(s.h(0), oracle, 1e-12);
  EXPECT_NEAR(s.h(0), 0.549306, 1e-6);
  EXPECT_NEAR(s.conditional(0), 0.25, 1e-12);
  EXPECT_NEAR(s.conditional(1), 0.75, 1e-12);
}

TEST(InnerDual, BoundaryRaises) {
  const auto nu = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  EXPECT_THROW(inner_dual_solve(Vector::Constant(1, 1.0), Vector::Zero(2), nu), NotIrreducible);
  EXPECT_THROW(inner_dual_solve(Vector::Constant(1, 2.0), Vector::Zero(2), nu), NotIrreducible);
}

TEST(InnerDual, FlatSupportInTwoDimensions) {
  Matrix y(3, 2);
  y << -1, 0, 0, 0, 1, 0;
  const DiscreteMeasure nu(y, Vector::Constant(3, 1.0 / 3));
  Vector x(2);
  x << 0.3, 0.0;
  const auto s = inner_dual_solve(x, Vector::Zero(3), nu);
  EXPECT_EQ(s.h(1), 0.0);
  EXPECT_LT((y.transpose() * s.conditional - x).norm(), 1e-12);
}

TEST(InnerDual, DivergenceGuard) {
  const auto nu = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  SolverConfig cfg;
  cfg.h_max = 5.0;
  EXPECT_THROW(inner_dual_solve(Vector::Constant(1, 0.99999999), Vector::Zero(2), nu, cfg), DualDivergence);
}

TEST(Sinkhorn, DiracStart) {
  const auto mu = DiscreteMeasure::line({0}, {1});
  const auto nu = DiscreteMeasure::line({-2, 0, 2}, {0.25, 0.5, 0.25});
  const auto r = sinkhorn_msb(mu, nu);
  ASSERT_TRUE(r.converged);
  EXPECT_LT((r.coupling.weights - product_coupling(mu, nu).weights).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(r.primal_value, 0.0, 1e-14);
  EXPECT_LT(r.potentials.phi.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(r.potentials.psi.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(r.potentials.h.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Sinkhorn, UniqueTwoByTwo) {
  const auto mu = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  const auto nu = DiscreteMeasure::line({-2, 2}, {0.5, 0.5});
  const auto r = sinkhorn_msb(mu, nu);
  ASSERT_TRUE(r.converged);
  Matrix expected(2, 2);
  expected << 0.375, 0.125, 0.125, 0.375;
  EXPECT_LT((r.coupling.weights - expected).cwiseAbs().maxCoeff(), 1e-10);
  const double v = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(r.primal_value, v, 1e-9);
  EXPECT_NEAR(v, 0.130812, 1e-6);
}

TEST(Sinkhorn, GoldenSectionOracle) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  ASSERT_TRUE(r.converged);
  EXPECT_LT((r.coupling.weights - inst.oracle()).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Sinkhorn, ReportInvariants) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  ASSERT_TRUE(r.converged);
  EXPECT_LT(r.coupling.row_residual(inst.mu), 1e-10);
  EXPECT_LT(r.coupling.column_residual(inst.nu), 1e-10);
  EXPECT_LT(r.coupling.martingale_residual(inst.mu, inst.nu), 1e-10);
  EXPECT_LT(std::abs(r.primal_value - r.dual_value), 1e-8 * (1 + std::abs(r.primal_value)));
  // Gauge.
  EXPECT_LT(std::abs(inst.nu.weights().dot(r.potentials.psi)), 1e-12);
  EXPECT_LT(std::abs(inst.nu.weights().dot(r.potentials.psi.cwiseProduct(inst.nu.atoms().col(0)))), 1e-12);
}

TEST(Sinkhorn, GibbsReassembly) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  ASSERT_TRUE(r.converged);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double lhs = std::log(r.coupling.weights(i, j) / (inst.mu.weight(i) * inst.nu.weight(j)));
      const double rhs = r.potentials.phi(i) + r.potentials.psi(j) +
                         r.potentials.h(i, 0) * (inst.nu.atoms()(j, 0) - inst.mu.atoms()(i, 0));
      EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(Sinkhorn, MonotoneDualAscent) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto [mu, nu] = random_feasible_instance(rng, 1 + trial % 2, 4, 5);
    const auto r = sinkhorn_msb(mu, nu);
    ASSERT_TRUE(r.converged);
    for (std::size_t k = 1; k < r.dual_history.size(); ++k)
      EXPECT_GE(r.dual_history[k], r.dual_history[k - 1] - 1e-12) << k;
  }
}

TEST(Sinkhorn, WeakDualityAgainstFeasibleCouplings) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  for (double a = 0.251; a < 0.3; a += 0.007) {
    const Coupling m{TwoByThree::coupling(a)};
    EXPECT_LE(r.dual_value, primal_value(m, inst.mu, inst.nu) + 1e-12);
  }
}

TEST(Sinkhorn, TranslationInvariance) {
  std::mt19937_64 rng(9);
  const auto [mu, nu] = random_feasible_instance(rng, 2, 4, 5);
  Vector c(2);
  c << 1.5, -0.7;
  const auto a = sinkhorn_msb(mu, nu);
  const auto b = sinkhorn_msb(mu.translated(c), nu.translated(c));
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_LT((a.coupling.weights - b.coupling.weights).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sinkhorn, Preconditions) {
  const auto spread = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  EXPECT_THROW(sinkhorn_msb(spread, DiscreteMeasure::line({0}, {1})), NotInConvexOrder);
  // mu-atom on the hull boundary.
  EXPECT_THROW(sinkhorn_msb(DiscreteMeasure::line({-1, 1}, {0.5, 0.5}), DiscreteMeasure::line({-1, 0, 1}, {0.5, 0.0 + 1e-300, 0.5 - 1e-300})),
               NotIrreducible);
}

TEST(Sinkhorn, IterationCapGivesReport) {
  const auto mu = worked_mu();
  const auto nu = worked_nu();
  SolverConfig cfg;
  cfg.max_outer_iterations = 2;
  const auto r = sinkhorn_msb(mu, nu, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2);
  EXPECT_GT(r.marginal_residual, cfg.marginal_tolerance);
}

TEST(DualValue, ShiftInvariance) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  const Vector shifted = r.potentials.psi.array() + 0.8 - 1.3 * inst.nu.atoms().col(0).array();
  EXPECT_NEAR(dual_value(shifted, inst.mu, inst.nu), dual_value(r.potentials.psi, inst.mu, inst.nu), 1e-10);
  EXPECT_NEAR(dual_value(Vector::Zero(3), DiscreteMeasure::line({0}, {1}), inst.nu), 0.0, 1e-15);
}

TEST(PrimalValue, ProductIsZero) {
  const TwoByThree inst;
  EXPECT_NEAR(primal_value(product_coupling(inst.mu, inst.nu), inst.mu, inst.nu), 0.0, 1e-15);
}

TEST(ClassicalSinkhorn, DiracBase) {
  const auto nu = DiscreteMeasure::line({-2, 0, 2}, {0.3, 0.4, 0.3});
  const auto r = classical_sinkhorn_sp(DiscreteMeasure::line({0}, {1}), nu);
  EXPECT_NEAR(r.value, 0.0, 1e-14);
  EXPECT_LT((r.coupling.weights.row(0).transpose() - nu.weights()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ClassicalSinkhorn, GoldenSectionSymmetric) {
  const auto two = DiscreteMeasure::line({-1, 1}, {0.5, 0.5});
  const auto r = classical_sinkhorn_sp(two, two);
  // Couplings [[a, 1/2 - a], [1/2 - a, a]].
  auto f = [](double a) {
    Matrix m(2, 2);
    m << a, 0.5 - a, 0.5 - a, a;
    return plain_entropy(m, Vector::Constant(2, 0.5), Vector::Constant(2, 0.5)) - (2 * a - 2 * (0.5 - a));
  };
  const double a = golden_section(f, 1e-12, 0.5 - 1e-12);
  EXPECT_NEAR(r.value, f(a), 1e-8);
  EXPECT_NEAR(r.coupling.weights(0, 0), a, 1e-6);
  EXPECT_LT(r.ss1_residual, 1e-12);
  EXPECT_LT(r.ss2_residual, 1e-12);
}

TEST(BaseMeasure, ConditionalsAndValueChain) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  std::vector<std::string> warnings;
  const auto base = extract_base_measure(r, inst.mu, &warnings);
  EXPECT_TRUE(warnings.empty());
  ASSERT_EQ(base.size(), 2);
  const auto sp = classical_sinkhorn_sp(base, inst.nu);
  for (Eigen::Index i = 0; i < 2; ++i)
    EXPECT_LT((sp.coupling.conditional(i) - r.coupling.conditional(i)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(vp_value(base, inst.mu, inst.nu), r.primal_value, 1e-7);
}

TEST(BaseMeasure, VpIsMaximizedAtBase) {
  const TwoByThree inst;
  const auto r = sinkhorn_msb(inst.mu, inst.nu);
  const auto base = extract_base_measure(r, inst.mu);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.2);
  for (int k = 0; k < 20; ++k) {
    Matrix atoms = base.atoms();
    for (auto& v : atoms.reshaped()) v += g(rng);
    EXPECT_LE(vp_value(DiscreteMeasure(atoms, base.weights()), inst.mu, inst.nu), r.primal_value + 1e-9);
  }
  EXPECT_NEAR(vp_value(DiscreteMeasure::line({0}, {1}), DiscreteMeasure::line({0}, {1}), inst.nu), 0.0, 1e-14);
}

TEST(BaseMeasure, MergesCoincidentH) {
  // Two mu-atoms at the same location are merged on ingestion, so build the
  // report by hand to exercise the warning path.
  SolveReport r;
  r.converged = true;
  r.potentials.h = Matrix::Zero(2, 1);
  const auto mu = DiscreteMeasure::line({-0.1, 0.1}, {0.5, 0.5});
  std::vector<std::string> warnings;
  const auto base = extract_base_measure(r, mu, &warnings);
  EXPECT_EQ(base.size(), 1);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Sinkhorn, WorkedInstance) {
  const auto r = sinkhorn_msb(worked_mu(), worked_nu());
  ASSERT_TRUE(r.converged);
  EXPECT_LT((r.coupling.weights - worked_entropy_matrix()).cwiseAbs().maxCoeff(), 5e-5);
}
