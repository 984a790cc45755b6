#pragma once

// Value chain on a solved discrete instance: primal = dual = variational
// value at the extracted base measure, plus the structural checks that tie
// the martingale coupling to the classical Schrodinger coupling of
// (h#mu, nu).

#include "mbridge/measures.hpp"
#include "mbridge/msb_solver.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mbridge {

struct CertifyThresholds {
  double primal_dual = 1e-8;
  double primal_vp = 1e-7;
  double conditional = 1e-8;
  double schrodinger = 1e-10;
  double reference_identity = 1e-10;
};

struct Certificate {
  SolveReport report;
  DiscreteMeasure base;
  double primal = 0.0;
  double dual = 0.0;
  double vp = 0.0;
  double sp_value = 0.0;
  double mcov_value = 0.0;
  double ss1_residual = 0.0;
  double ss2_residual = 0.0;
  // max_i |m_{x_i} - pi_{h(x_i)}| entrywise
  double conditional_error = 0.0;
  double reference_identity_residual = 0.0;
  std::vector<std::string> warnings;

  double primal_dual_gap() const { return std::abs(primal - dual); }
  double primal_vp_gap() const { return std::abs(primal - vp); }
  bool passed(const CertifyThresholds& t = {}) const {
    return report.converged && primal_dual_gap() < t.primal_dual && primal_vp_gap() < t.primal_vp &&
           conditional_error < t.conditional && ss1_residual < t.schrodinger && ss2_residual < t.schrodinger &&
           reference_identity_residual < t.reference_identity;
  }
};

// Throws what sinkhorn_msb throws, and NotConverged when the solve stops
// short (the value chain is meaningless away from the optimizer).
inline Certificate certify_value_chain(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                       const SolverConfig& config = {}) {
  Certificate c;
  c.report = sinkhorn_msb(mu, nu, config);
  if (!c.report.converged)
    throw NotConverged("certify: solver stopped after " + std::to_string(c.report.iterations) +
                       " iterations with marginal residual " + std::to_string(c.report.marginal_residual));
  c.primal = c.report.primal_value;
  c.dual = c.report.dual_value;
  c.base = extract_base_measure(c.report, mu, &c.warnings);
  const SchrodingerResult sp = classical_sinkhorn_sp(c.base, nu);
  c.sp_value = sp.value;
  c.mcov_value = mcov_discrete(c.base, mu).value;
  c.vp = c.sp_value + c.mcov_value;
  c.ss1_residual = sp.ss1_residual;
  c.ss2_residual = sp.ss2_residual;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    // Base atoms may have been merged; look up the one at h(x_i).
    const Vector h = c.report.potentials.h.row(i).transpose();
    Eigen::Index b = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < c.base.size(); ++k) {
      const double d = (c.base.atom(k) - h).norm();
      if (d < best) best = d, b = k;
    }
    c.conditional_error = std::max(
        c.conditional_error, (sp.coupling.conditional(b) - c.report.coupling.conditional(i)).cwiseAbs().maxCoeff());
  }
  c.reference_identity_residual = gaussian_reference_identity_check(c.report.coupling, mu, nu);
  return c;
}

}  // namespace mbridge
