#include "mbridge/measures.hpp"
#include "mbridge/normal.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <random>

using namespace mbridge;

namespace {

DiscreteMeasure line(std::vector<double> a, std::vector<double> w) { return DiscreteMeasure::line(a, w); }

}  // namespace

TEST(Measure, RejectsBadWeights) {
  EXPECT_THROW(line({0, 1}, {0.5, 0.6}), StructuralError);
  EXPECT_THROW(line({0, 1}, {1.0, 0.0}), StructuralError);
  EXPECT_THROW(line({0, 1}, {1.0}), StructuralError);
}

TEST(Measure, MergesDuplicateAtoms) {
  const auto m = line({1, 2, 1 + 1e-14}, {0.25, 0.5, 0.25});
  ASSERT_EQ(m.size(), 2);
  EXPECT_DOUBLE_EQ(m.weight(0), 0.5);
}

TEST(RelativeEntropy, HandValues) {
  Vector p(2), q(2);
  p << 0.5, 0.5;
  q << 0.25, 0.75;
  EXPECT_NEAR(relative_entropy(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(relative_entropy(p, q), 0.143841, 1e-6);
  EXPECT_EQ(relative_entropy(p, p), 0.0);
  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  EXPECT_EQ(relative_entropy(a, b), kInfiniteEntropy);
  EXPECT_THROW(relative_entropy(a, Vector::Ones(3)), StructuralError);
}

TEST(RelativeEntropy, JointlyConvex) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto draw = [&] {
      Vector v(5);
      for (auto& x : v) x = u(rng);
      return Vector(v / v.sum());
    };
    const Vector p1 = draw(), p2 = draw(), q1 = draw(), q2 = draw();
    const double lhs = relative_entropy(Vector(0.5 * (p1 + p2)), Vector(0.5 * (q1 + q2)));
    const double rhs = 0.5 * relative_entropy(p1, q1) + 0.5 * relative_entropy(p2, q2);
    EXPECT_LE(lhs, rhs + 1e-15);
  }
}

TEST(Moments, SmallCases) {
  auto m = barycenter_and_moments(line({-1, 1}, {0.5, 0.5}));
  EXPECT_NEAR(m.mean(0), 0.0, 1e-15);
  EXPECT_NEAR(m.second_moment, 1.0, 1e-15);
  m = barycenter_and_moments(line({-2, 0, 2}, {0.25, 0.5, 0.25}));
  EXPECT_NEAR(m.second_moment, 2.0, 1e-15);
  Vector a(2);
  a << 3, -1;
  m = barycenter_and_moments(DiscreteMeasure::dirac(a));
  EXPECT_TRUE(m.mean.isApprox(a));
  EXPECT_EQ(m.covariance.norm(), 0.0);
}

TEST(ConvexOrder, Examples) {
  const auto nu = line({-1, 1}, {0.5, 0.5});
  auto r = check_convex_order(nu, nu);
  ASSERT_TRUE(r.in_order);
  EXPECT_TRUE(r.witness->is_martingale(nu, nu));
  EXPECT_NEAR(r.witness->weights(0, 0), 0.5, 1e-12);

  r = check_convex_order(line({0}, {1}), nu);
  ASSERT_TRUE(r.in_order);
  EXPECT_NEAR(r.witness->weights(0, 1), 0.5, 1e-12);

  EXPECT_FALSE(check_convex_order(nu, line({0}, {1})).in_order);
  // Means differ.
  EXPECT_FALSE(check_convex_order(line({0.1}, {1}), nu).in_order);

  Matrix a2 = Matrix::Zero(1, 2);
  EXPECT_THROW(check_convex_order(DiscreteMeasure(a2, Vector::Ones(1)), nu), StructuralError);
}

TEST(ConvexOrder, WitnessPassesPredicateInTwoDimensions) {
  Matrix y(4, 2);
  y << -1, -1, 1, -1, 1, 1, -1, 1;
  const DiscreteMeasure nu(y, Vector::Constant(4, 0.25));
  Matrix x(2, 2);
  x << -0.5, 0, 0.5, 0;
  const DiscreteMeasure mu(x, Vector::Constant(2, 0.5));
  const auto r = check_convex_order(mu, nu);
  ASSERT_TRUE(r.in_order);
  EXPECT_LT(r.witness->martingale_residual(mu, nu), 1e-9);
}

TEST(InteriorMargin, Signs) {
  Matrix y(3, 1);
  y << -1, 0, 1;
  EXPECT_GT(relative_interior_margin(Vector::Constant(1, 0.3), y), 0.0);
  EXPECT_NEAR(relative_interior_margin(Vector::Constant(1, 1.0), y), 0.0, 1e-12);
  EXPECT_EQ(relative_interior_margin(Vector::Constant(1, 1.5), y), -std::numeric_limits<double>::infinity());

  Matrix sq(4, 2);
  sq << -1, -1, 1, -1, 1, 1, -1, 1;
  EXPECT_NEAR(relative_interior_margin(Vector::Zero(2), sq), 0.25, 1e-12);
  Vector edge(2);
  edge << 1, 0;
  EXPECT_NEAR(relative_interior_margin(edge, sq), 0.0, 1e-12);
}

TEST(Mcov, Examples) {
  const auto b = line({-2, 0, 5}, {0.2, 0.3, 0.5});
  EXPECT_NEAR(mcov_discrete(line({1.5}, {1}), b).value, 1.5 * (-0.4 + 2.5), 1e-12);
  EXPECT_NEAR(mcov_discrete(line({-1, 1}, {0.5, 0.5}), line({-2, 2}, {0.5, 0.5})).value, 2.0, 1e-14);
  EXPECT_NEAR(mcov_discrete(b, b).value, barycenter_and_moments(b).second_moment, 1e-12);
}

TEST(Mcov, ComonotoneMatchesLp) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 1.0), loc(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    auto draw = [&](int n) {
      std::vector<double> a(n), w(n);
      double s = 0;
      for (int i = 0; i < n; ++i) {
        a[i] = loc(rng);
        w[i] = u(rng);
        s += w[i];
      }
      for (auto& x : w) x /= s;
      return line(a, w);
    };
    const auto alpha = draw(2 + trial % 5), beta = draw(3 + trial % 4);
    const auto c = mcov_comonotone(alpha, beta);
    EXPECT_NEAR(c.value, mcov_lp(alpha, beta).value, 1e-10);
    EXPECT_LT(c.coupling.row_residual(alpha), 1e-14);
    EXPECT_LT(c.coupling.column_residual(beta), 1e-14);
  }
}

TEST(GaussianReference, ProductWithDiracStart) {
  const auto mu = line({0}, {1});
  const auto nu = line({-2, 0, 2}, {0.3, 0.4, 0.3});
  EXPECT_LT(gaussian_reference_identity_check(product_coupling(mu, nu), mu, nu), 1e-12);
}

TEST(GaussianReference, TranslationLeavesResidual) {
  const auto mu = line({-1, 1}, {0.5, 0.5});
  const auto nu = line({-2, 0, 2}, {0.3, 0.4, 0.3});
  // a = 0.27 member of the one-parameter family of martingale couplings.
  const double a = 0.27;
  Coupling m{Matrix(2, 3)};
  m.weights << a, 0.75 - 2 * a, a - 0.25, 0.3 - a, 2 * a - 0.35, 0.55 - a;
  ASSERT_TRUE(m.is_martingale(mu, nu, 1e-14));
  const double r0 = gaussian_reference_identity_check(m, mu, nu);
  EXPECT_LT(r0, 1e-10);
  const Vector c = Vector::Constant(1, 0.7);
  EXPECT_LT(gaussian_reference_identity_check(m, mu.translated(c), nu.translated(c)), 1e-10);
}

TEST(Normal, QuantileAgainstBoost) {
  const boost::math::normal_distribution<double> g;
  for (double q : {1e-10, 1e-6, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.97575, 0.999, 1 - 1e-10}) {
    EXPECT_NEAR(normal::quantile(q), boost::math::quantile(g, q), 1e-12 * std::max(1.0, std::abs(normal::quantile(q))))
        << q;
  }
}

TEST(Normal, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> e(-10, 0);
  for (int i = 0; i < 2000; ++i) {
    const double q = std::pow(10.0, e(rng));
    EXPECT_NEAR(normal::cdf(normal::quantile(q)), q, 1e-12 * std::max(q, 1e-2));
    EXPECT_NEAR(normal::cdf(normal::quantile(1 - q)), 1 - q, 1e-12);
  }
}
