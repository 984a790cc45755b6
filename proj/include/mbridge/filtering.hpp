#pragma once

// Filtering view of the Follmer martingale. A hidden signal Y - x with
// Y ~ m_x is observed through R_s = s (Y - x) + W_s. The posterior mean
// Z_s = E[Y | R_u, u <= s] has the law of M at the information time
// tau_sigma(s) = sigma^2 s / (1 + sigma^2 s), whatever sigma is.

#include "mbridge/dynamics.hpp"
#include "mbridge/errors.hpp"
#include "mbridge/measures.hpp"
#include "mbridge/msb_solver.hpp"
#include "mbridge/random.hpp"
#include "mbridge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace mbridge {

inline double info_time_change(double sigma, double s) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw StructuralError("info_time_change: sigma must be positive");
  if (!(s >= 0.0)) throw StructuralError("info_time_change: s must be nonnegative");
  if (std::isinf(s)) return 1.0;
  const double a = sigma * sigma * s;
  return a / (1.0 + a);
}

// Inverse clock; t = 1 maps to +infinity.
inline double info_time_inverse(double sigma, double t) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw StructuralError("info_time_inverse: sigma must be positive");
  if (!(t >= 0.0 && t <= 1.0)) throw StructuralError("info_time_inverse: t outside [0, 1]");
  if (t == 1.0) return std::numeric_limits<double>::infinity();
  return t / (sigma * sigma * (1.0 - t));
}

struct PosteriorEstimate {
  Vector weights;  // over the fiber's atoms
  Vector z;        // posterior mean of Y
};

namespace detail {

// Precomputed pieces of w_j propto m_j exp(b_j . R - s |b_j|^2 / 2).
class PosteriorKernel {
 public:
  explicit PosteriorKernel(const FiberModel& fiber) {
    if (!fiber.is_discrete()) throw StructuralError("posterior_estimator: fiber must be discrete");
    const auto& t = fiber.terminal();
    x_ = fiber.start();
    b_ = t.atoms().rowwise() - x_.transpose();
    half_sq_ = 0.5 * b_.rowwise().squaredNorm();
    log_m_ = t.weights().array().log();
    w_.resize(t.size());
  }

  // Fills weights and returns them; z receives the posterior mean.
  const Vector& eval(double s, const Eigen::Ref<const Vector>& r, Vector& z) {
    w_.noalias() = b_ * r;
    w_ += log_m_ - s * half_sq_;
    const double top = w_.maxCoeff();
    w_ = (w_.array() - top).exp();
    w_ /= w_.sum();
    z = x_;
    z.noalias() += b_.transpose() * w_;
    return w_;
  }

 private:
  Vector x_;
  Matrix b_;
  Vector half_sq_;
  Vector log_m_;
  Vector w_;
};

}  // namespace detail

inline PosteriorEstimate posterior_estimator(const FiberModel& fiber, double s, const Vector& r) {
  if (!(s >= 0.0) || !std::isfinite(s)) throw StructuralError("posterior_estimator: s must be finite and >= 0");
  if (r.size() != fiber.dimension()) throw StructuralError("posterior_estimator: observation dimension mismatch");
  detail::PosteriorKernel k(fiber);
  PosteriorEstimate out;
  out.weights = k.eval(s, r, out.z);
  return out;
}

// Observation paths on a uniform s-grid [0, horizon].
struct ObservationPaths {
  std::vector<double> s_grid;
  std::vector<std::size_t> record_index;
  std::vector<double> record_s;
  Vector start;
  Matrix signal;           // Y - x per path
  std::vector<int> atom;   // index of Y among the fiber atoms
  std::vector<Matrix> R;   // per record: n x d
  std::vector<Matrix> Z;

  std::size_t size() const { return atom.size(); }
  std::size_t record_at(double s) const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < record_s.size(); ++k)
      if (std::abs(record_s[k] - s) < std::abs(record_s[best] - s)) best = k;
    return best;
  }
};

struct ObservationOptions {
  double horizon = 4.0;
  std::size_t steps = 400;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 42;
  std::size_t record_stride = 1;
};

inline ObservationPaths simulate_observations(const FiberModel& fiber, const ObservationOptions& o) {
  if (!fiber.is_discrete()) throw StructuralError("simulate_observations: fiber must be discrete");
  if (!(o.horizon > 0.0) || !std::isfinite(o.horizon)) throw StructuralError("simulate_observations: horizon must be positive");
  if (o.steps == 0 || o.n_paths == 0 || o.record_stride == 0)
    throw StructuralError("simulate_observations: steps, n_paths and record_stride must be positive");
  const Eigen::Index d = fiber.dimension();
  const auto n = static_cast<Eigen::Index>(o.n_paths);
  ObservationPaths p;
  p.start = fiber.start();
  p.s_grid.resize(o.steps + 1);
  for (std::size_t k = 0; k <= o.steps; ++k)
    p.s_grid[k] = o.horizon * static_cast<double>(k) / static_cast<double>(o.steps);
  p.s_grid.back() = o.horizon;
  for (std::size_t k = 0; k <= o.steps; k += o.record_stride) p.record_index.push_back(k);
  if (p.record_index.back() != o.steps) p.record_index.push_back(o.steps);
  for (auto k : p.record_index) p.record_s.push_back(p.s_grid[k]);
  p.signal.resize(n, d);
  p.atom.resize(o.n_paths);
  p.R.assign(p.record_index.size(), Matrix(n, d));
  p.Z.assign(p.record_index.size(), Matrix(n, d));

  parallel_for(o.n_paths, [&](std::size_t i) {
    Engine rng = substream(o.seed, i);
    std::normal_distribution<double> g;
    detail::PosteriorKernel kernel(fiber);
    const auto row = static_cast<Eigen::Index>(i);
    const Vector b = fiber.sample_terminal(rng, &p.atom[i]) - fiber.start();
    p.signal.row(row) = b.transpose();
    Vector r = Vector::Zero(d), z(d);
    std::size_t next = 0;
    for (std::size_t k = 0; k <= o.steps; ++k) {
      if (k > 0) {
        const double ds = p.s_grid[k] - p.s_grid[k - 1];
        const double sd = std::sqrt(ds);
        for (Eigen::Index c = 0; c < d; ++c) r(c) += ds * b(c) + sd * g(rng);
      }
      if (next < p.record_index.size() && p.record_index[next] == k) {
        kernel.eval(p.s_grid[k], r, z);
        p.R[next].row(row) = r.transpose();
        p.Z[next].row(row) = z.transpose();
        ++next;
      }
    }
  });
  return p;
}

// --------------------------------------------------------------------------
// Law comparisons

inline double max_coordinate_ks(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw StructuralError("ks: dimension mismatch");
  double out = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    std::vector<double> u(a.col(c).begin(), a.col(c).end()), v(b.col(c).begin(), b.col(c).end());
    out = std::max(out, stats::ks_distance(std::move(u), std::move(v)));
  }
  return out;
}

struct SigmaInvarianceReport {
  std::vector<double> sigmas;
  std::vector<double> checkpoints;
  std::vector<Matrix> ks;  // per checkpoint, sigmas x sigmas
  double max_ks = 0.0;
};

// Simulates M^sigma for each sigma and compares the laws of M^sigma at
// tau_sigma(s). Each sigma gets its own seed: with a shared seed the samples
// would coincide path by path and the test would say nothing about laws.
inline SigmaInvarianceReport sigma_invariance_test(const FiberModel& fiber, const std::vector<double>& sigmas,
                                                   const std::vector<double>& checkpoints, std::size_t n_paths,
                                                   std::uint64_t seed) {
  if (sigmas.empty()) throw StructuralError("sigma_invariance_test: need at least one sigma");
  if (checkpoints.empty()) throw StructuralError("sigma_invariance_test: need at least one checkpoint");
  SigmaInvarianceReport rep;
  rep.sigmas = sigmas;
  rep.checkpoints = checkpoints;
  std::vector<std::vector<Matrix>> samples(sigmas.size());
  for (std::size_t a = 0; a < sigmas.size(); ++a) {
    std::vector<double> grid{0.0, 1.0};
    for (double s : checkpoints) grid.push_back(info_time_change(sigmas[a], s));
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    SimulationOptions o;
    o.grid = grid;
    o.n_paths = n_paths;
    o.seed = seed + 0x9e3779b97f4a7c15ull * a;
    o.record_stride = 1;
    const PathEnsemble e = simulate_follmer_martingale(fiber.with_sigma(sigmas[a]), o);
    for (double s : checkpoints) samples[a].push_back(e.M[e.record_at(info_time_change(sigmas[a], s))]);
  }
  const auto m = static_cast<Eigen::Index>(sigmas.size());
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    Matrix k = Matrix::Zero(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = a + 1; b < m; ++b) {
        k(a, b) = k(b, a) = max_coordinate_ks(samples[static_cast<std::size_t>(a)][c],
                                              samples[static_cast<std::size_t>(b)][c]);
        rep.max_ks = std::max(rep.max_ks, k(a, b));
      }
    rep.ks.push_back(std::move(k));
  }
  return rep;
}

// Law(Z_s) against Law(M_{s / (1 + s)}) at reference volatility 1.
inline double dynamics_consistency_ks(const FiberModel& fiber, double s, std::size_t n_paths, std::uint64_t seed) {
  ObservationOptions oo;
  oo.horizon = s;
  oo.steps = 1;
  oo.n_paths = n_paths;
  oo.seed = seed;
  const ObservationPaths obs = simulate_observations(fiber.with_sigma(1.0), oo);
  SimulationOptions so;
  so.grid = {0.0, info_time_change(1.0, s), 1.0};
  so.n_paths = n_paths;
  so.seed = seed + 0x9e3779b97f4a7c15ull;
  const PathEnsemble e = simulate_follmer_martingale(fiber.with_sigma(1.0), so);
  return max_coordinate_ks(obs.Z.back(), e.M[1]);
}

// --------------------------------------------------------------------------
// Two-point case: x = 1/2, Y uniform on {0, 1}. Then Z_s = logistic(R_s)
// and Z solves dZ = Z (1 - Z) dB.

struct WonhamReport {
  std::vector<double> checkpoints;
  std::vector<double> ks;  // Euler vs exact, per checkpoint
  std::size_t violations = 0;  // Euler steps that left (0, 1) before clamping
  double horizon = 0.0;
  double frequency_low = 0.0;   // fraction of Euler paths with Z_S < 1/2
  double frequency_high = 0.0;  // fraction with Z_S > 1/2
  double exact_frequency_high = 0.0;  // fraction of exact paths with Y = 1
};

struct WonhamOptions {
  std::vector<double> checkpoints{1.0, 4.0};
  double ds = 1e-3;
  std::size_t n_paths = 100000;
  std::uint64_t seed = 42;
};

inline double logistic(double r) {
  return r >= 0.0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r));
}

inline WonhamReport wonham_sde_crosscheck(const WonhamOptions& o) {
  if (o.checkpoints.empty()) throw StructuralError("wonham: need at least one checkpoint");
  if (!(o.ds > 0.0) || o.n_paths == 0) throw StructuralError("wonham: ds and n_paths must be positive");
  std::vector<double> cps = o.checkpoints;
  std::sort(cps.begin(), cps.end());
  if (!(cps.front() > 0.0) || !std::isfinite(cps.back())) throw StructuralError("wonham: checkpoints must be positive and finite");
  // Checkpoints are rounded to whole Euler steps.
  std::vector<std::size_t> steps_at;
  for (double s : cps) steps_at.push_back(static_cast<std::size_t>(std::llround(s / o.ds)));
  if (steps_at.front() == 0) throw StructuralError("wonham: checkpoint shorter than one step");

  const std::size_t n = o.n_paths, m = cps.size();
  std::vector<std::vector<double>> euler(m, std::vector<double>(n)), exact(m, std::vector<double>(n));
  std::vector<std::size_t> violations(n, 0);
  std::vector<char> exact_high(n, 0);
  constexpr double kGuard = 1e-300;

  parallel_for(n, [&](std::size_t i) {
    std::normal_distribution<double> g;
    Engine rng = substream(o.seed, 2 * i);
    double z = 0.5;
    std::size_t k = 0;
    for (std::size_t c = 0; c < m; ++c) {
      for (; k < steps_at[c]; ++k) {
        z += z * (1.0 - z) * std::sqrt(o.ds) * g(rng);
        if (!(z > 0.0 && z < 1.0)) {
          ++violations[i];
          z = std::clamp(z, kGuard, 1.0 - 1e-16);
        }
      }
      euler[c][i] = z;
    }
    Engine rng2 = substream(o.seed, 2 * i + 1);
    const bool high = std::uniform_real_distribution<double>(0.0, 1.0)(rng2) < 0.5;
    exact_high[i] = high;
    const double signal = high ? 0.5 : -0.5;
    double w = 0.0, s_prev = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double s = static_cast<double>(steps_at[c]) * o.ds;
      w += std::sqrt(s - s_prev) * g(rng2);
      s_prev = s;
      exact[c][i] = logistic(s * signal + w);
    }
  });

  WonhamReport rep;
  for (std::size_t c = 0; c < m; ++c) {
    rep.checkpoints.push_back(static_cast<double>(steps_at[c]) * o.ds);
    rep.ks.push_back(stats::ks_distance(euler[c], exact[c]));
  }
  rep.horizon = rep.checkpoints.back();
  for (std::size_t i = 0; i < n; ++i) {
    rep.violations += violations[i];
    const double z = euler[m - 1][i];
    rep.frequency_low += z < 0.5;
    rep.frequency_high += z > 0.5;
    rep.exact_frequency_high += exact_high[i];
  }
  rep.frequency_low /= static_cast<double>(n);
  rep.frequency_high /= static_cast<double>(n);
  rep.exact_frequency_high /= static_cast<double>(n);
  return rep;
}

// --------------------------------------------------------------------------
// Restart: on fiber i of a solved coupling the posterior after observing
// (s, R) is again of Gibbs form, with psi replaced by
// psi_tau(y) = psi(y) - tau |y|^2 / (2 (1 - tau)), tau = s / (1 + s), and a new
// linear tilt pinned down by the barycenter Z alone. So recomputing the
// weights from (s, Z) must reproduce the path weights, and the tilt must be
// h_i + R + s x_i on the affine hull of the atoms.

struct RestartCheck {
  Vector path_weights;
  Vector restart_weights;
  Vector z;
  double max_weight_error = 0.0;
  double tilt_error = 0.0;
};

inline RestartCheck restart_consistency(const SolveReport& rep, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                        Eigen::Index i, double s, const Vector& r,
                                        const SolverConfig& config = {}) {
  if (i < 0 || i >= mu.size()) throw StructuralError("restart_consistency: fiber index out of range");
  if (!(s >= 0.0) || !std::isfinite(s)) throw StructuralError("restart_consistency: s must be finite and >= 0");
  const Vector x = mu.atom(i);
  const Vector row = rep.coupling.weights.row(i).transpose();
  const FiberModel fiber = FiberModel::discrete(x, DiscreteMeasure(nu.atoms(), row / row.sum()));
  const PosteriorEstimate post = posterior_estimator(fiber, s, r);

  const double tau = info_time_change(1.0, s);
  Vector psi_tau = rep.potentials.psi;
  for (Eigen::Index j = 0; j < nu.size(); ++j)
    psi_tau(j) -= tau * nu.atom(j).squaredNorm() / (2.0 * (1.0 - tau));
  const InnerSolution sol = inner_dual_solve(post.z, psi_tau, nu, config);

  RestartCheck out;
  out.path_weights = post.weights;
  out.restart_weights = sol.conditional;
  out.z = post.z;
  out.max_weight_error = (post.weights - sol.conditional).cwiseAbs().maxCoeff();
  const Matrix dirs = detail::affine_directions(nu.atoms());
  const Vector predicted = rep.potentials.h.row(i).transpose() + r + s * x;
  out.tilt_error = (dirs.transpose() * (sol.h - predicted)).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace mbridge
