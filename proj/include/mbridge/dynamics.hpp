#pragma once

// Fiberwise simulation of the Follmer martingale. Given Y ~ m_x, the Follmer
// process relative to sigma B is a Brownian bridge x -> Y with volatility
// sigma, so it can be sampled exactly on any grid; the martingale is the
// posterior mean M_t = E[Y | X_t].

#include "mbridge/errors.hpp"
#include "mbridge/linalg.hpp"
#include "mbridge/measures.hpp"
#include "mbridge/random.hpp"
#include "mbridge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mbridge {

// Start point x, terminal law m_x (atoms or N(x, delta)) and the reference
// volatility of the driving Brownian motion.
class FiberModel {
 public:
  static FiberModel discrete(Vector x, DiscreteMeasure terminal, double sigma_ref = 1.0) {
    if (x.size() != terminal.dimension()) throw StructuralError("fiber: dimension mismatch");
    const Vector bary = terminal.atoms().transpose() * terminal.weights();
    if ((bary - x).norm() > 1e-10)
      throw StructuralError("fiber: terminal barycenter differs from the start point by " +
                            std::to_string((bary - x).norm()));
    FiberModel f(std::move(x), sigma_ref);
    f.terminal_ = std::move(terminal);
    f.cumulative_.resize(static_cast<std::size_t>(f.terminal_->size()));
    double c = 0.0;
    for (Eigen::Index j = 0; j < f.terminal_->size(); ++j) f.cumulative_[static_cast<std::size_t>(j)] = c += f.terminal_->weight(j);
    f.cumulative_.back() = 1.0;
    return f;
  }

  static FiberModel gaussian(Vector x, const Matrix& delta, double sigma_ref = 1.0) {
    if (delta.rows() != x.size()) throw StructuralError("fiber: dimension mismatch");
    FiberModel f(std::move(x), sigma_ref);
    const auto e = linalg::require_spd<NotInConvexOrder>(delta, "fiber covariance");
    f.delta_ = delta;
    f.lambda_ = e.values;
    f.basis_ = e.vectors;
    f.chol_ = e.vectors * e.values.cwiseSqrt().asDiagonal();
    return f;
  }

  bool is_discrete() const { return terminal_.has_value(); }
  const Vector& start() const { return x_; }
  Eigen::Index dimension() const { return x_.size(); }
  double sigma_ref() const { return sigma_; }
  const DiscreteMeasure& terminal() const { return *terminal_; }
  const Matrix& delta() const { return *delta_; }
  const Vector& delta_eigenvalues() const { return lambda_; }
  const Matrix& delta_eigenvectors() const { return basis_; }

  FiberModel with_sigma(double sigma) const {
    FiberModel f = *this;
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw StructuralError("fiber: sigma_ref must be positive");
    f.sigma_ = sigma;
    return f;
  }

  // Draws Y; for discrete fibers also reports the atom index.
  template <class Rng>
  Vector sample_terminal(Rng& rng, int* atom = nullptr) const {
    if (is_discrete()) {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      const int j = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                              static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
      if (atom) *atom = j;
      return terminal_->atom(j);
    }
    if (atom) *atom = -1;
    std::normal_distribution<double> g;
    Vector xi(x_.size());
    for (auto& v : xi) v = g(rng);
    return x_ + chol_ * xi;
  }

 private:
  FiberModel(Vector x, double sigma) : x_(std::move(x)), sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw StructuralError("fiber: sigma_ref must be positive");
  }

  Vector x_;
  double sigma_ = 1.0;
  std::optional<DiscreteMeasure> terminal_;
  std::vector<double> cumulative_;
  std::optional<Matrix> delta_;
  Vector lambda_;
  Matrix basis_;
  Matrix chol_;
};

// Conditional law of Y given X_t = z. For atoms y_j with a = z - x and
// b_j = y_j - x the weights are
//     q_j  propto  m_j exp((a . b_j - t |b_j|^2 / 2) / (sigma^2 (1 - t))),
// i.e. m_j times the bridge likelihood N(x + t b_j, sigma^2 t (1 - t))(z).
// At t = 1 only an exact atom hit is meaningful.
inline Vector backward_posterior(const FiberModel& fiber, double t, const Vector& z) {
  if (!fiber.is_discrete()) throw StructuralError("backward_posterior: fiber is Gaussian");
  if (!(t >= 0.0 && t <= 1.0)) throw StructuralError("backward_posterior: t outside [0, 1]");
  if (z.size() != fiber.dimension()) throw StructuralError("backward_posterior: dimension mismatch");
  const DiscreteMeasure& m = fiber.terminal();
  const Eigen::Index k = m.size();
  Vector w(k);
  if (t >= 1.0) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if ((m.atom(j) - z).norm() <= 1e-9) {
        w.setZero();
        w(j) = 1.0;
        return w;
      }
    }
    throw TerminalAmbiguity("backward_posterior: at t = 1 the point is not an atom of the terminal law");
  }
  const double s2 = fiber.sigma_ref() * fiber.sigma_ref() * (1.0 - t);
  const Vector a = z - fiber.start();
  for (Eigen::Index j = 0; j < k; ++j) {
    const Vector b = m.atom(j) - fiber.start();
    w(j) = std::log(m.weight(j)) + (a.dot(b) - 0.5 * t * b.squaredNorm()) / s2;
  }
  w = (w.array() - w.maxCoeff()).exp();
  return w / w.sum();
}

struct FiberCoefficients {
  Vector mean;        // E[Y | X_t = z], the martingale value
  Vector drift;       // u = (mean - z) / (1 - t)
  Matrix volatility;  // of M against the driving B: Cov(Y | X_t = z) / (sigma (1 - t))
};

inline FiberCoefficients fiber_coefficients(const FiberModel& fiber, double t, const Vector& z) {
  if (!(t >= 0.0 && t < 1.0))
    throw TerminalAmbiguity("fiber_coefficients: coefficients are only defined for t in [0, 1)");
  if (z.size() != fiber.dimension()) throw StructuralError("fiber_coefficients: dimension mismatch");
  const double sigma = fiber.sigma_ref();
  const double s2 = sigma * sigma * (1.0 - t);
  FiberCoefficients c;
  Matrix cov;
  if (fiber.is_discrete()) {
    const Vector q = backward_posterior(fiber, t, z);
    const Matrix& y = fiber.terminal().atoms();
    c.mean = y.transpose() * q;
    const Matrix centered = y.rowwise() - c.mean.transpose();
    cov = centered.transpose() * q.asDiagonal() * centered;
  } else {
    // Posterior precision D^-1 + t / (sigma^2 (1 - t)) I, diagonal in D's basis.
    const Matrix& u = fiber.delta_eigenvectors();
    const Vector& l = fiber.delta_eigenvalues();
    const Vector gain = l.array() / (s2 + t * l.array());
    c.mean = fiber.start() + u * (gain.asDiagonal() * (u.transpose() * (z - fiber.start())));
    cov = u * (s2 * gain).asDiagonal() * u.transpose();
  }
  c.drift = (c.mean - z) / (1.0 - t);
  c.volatility = cov / (sigma * (1.0 - t));
  return c;
}

// ---------------------------------------------------------------------------
// Path ensembles

enum class SimulationMode { exact_bridge, euler };

// left_endpoint: sum of integrand(t_k) dt_k over grid points.
// randomized: one uniform time per step with the state drawn by exact bridge
// interpolation between the two grid values; unbiased for the time integral.
enum class EnergyRule { left_endpoint, randomized };

struct SimulationOptions {
  std::vector<double> grid;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 42;
  SimulationMode mode = SimulationMode::exact_bridge;
  EnergyRule energy_rule = EnergyRule::left_endpoint;
  // Integrands are accumulated only for t <= 1 - energy_cutoff.
  double energy_cutoff = 1e-6;
  // Record M and X every `record_stride` grid points (endpoints always kept).
  // Zero picks the smallest stride that keeps storage under ~2e7 values.
  std::size_t record_stride = 0;
};

inline std::vector<double> uniform_grid(std::size_t steps) {
  if (steps == 0) throw StructuralError("uniform_grid: need at least one step");
  std::vector<double> g(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) g[k] = static_cast<double>(k) / static_cast<double>(steps);
  g.back() = 1.0;
  return g;
}

struct PathEnsemble {
  std::vector<double> grid;
  std::vector<std::size_t> record_index;  // grid indices of recorded states
  std::vector<double> record_times;
  std::uint64_t seed = 0;
  double sigma_ref = 1.0;
  SimulationMode mode = SimulationMode::exact_bridge;
  EnergyRule energy_rule = EnergyRule::left_endpoint;
  double energy_cutoff = 0.0;

  Matrix fiber_points;             // one row per fiber
  std::vector<int> fiber;          // fiber label per path
  Matrix terminal;                 // Y per path (n x d)
  std::vector<int> terminal_atom;  // atom index for discrete fibers, else -1
  std::vector<Matrix> M;           // per record: n x d
  std::vector<Matrix> X;
  std::vector<double> c_drift;
  std::vector<double> c_mart;
  // max over paths and grid points of |M_t - X_t - (1 - t) u_t(X_t)|
  double max_pathwise_deviation = 0.0;

  std::size_t size() const { return fiber.size(); }
  Eigen::Index dimension() const { return fiber_points.cols(); }
  // Index into the records of the recorded time closest to t.
  std::size_t record_at(double t) const {
    std::size_t best = 0;
    for (std::size_t r = 1; r < record_times.size(); ++r)
      if (std::abs(record_times[r] - t) < std::abs(record_times[best] - t)) best = r;
    return best;
  }
};

namespace detail {

inline void validate_grid(const std::vector<double>& grid) {
  if (grid.size() < 2) throw StructuralError("grid: need at least two points");
  if (grid.front() != 0.0 || grid.back() != 1.0) throw StructuralError("grid: must start at 0 and end at 1");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw StructuralError("grid: must be strictly increasing");
}

inline std::vector<std::size_t> record_indices(const SimulationOptions& o, std::size_t dim) {
  const std::size_t n = o.grid.size();
  std::size_t stride = o.record_stride;
  if (stride == 0) {
    const std::size_t budget = 20000000;
    const std::size_t per = std::max<std::size_t>(1, o.n_paths * dim * 2);
    const std::size_t max_records = std::max<std::size_t>(2, budget / per);
    stride = std::max<std::size_t>(1, (n + max_records - 1) / max_records);
  }
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < n; k += stride) idx.push_back(k);
  if (idx.back() != n - 1) idx.push_back(n - 1);
  return idx;
}

struct Integrands {
  double drift = 0.0;  // |u|^2 / (2 sigma^2)
  double mart = 0.0;   // |vol / sigma - I|^2 / (2 (1 - t))
};

// Allocation-free evaluation of the fiber coefficients along a path. Same
// formulas as fiber_coefficients, with the per-fiber constants hoisted.
class CoefficientEvaluator {
 public:
  explicit CoefficientEvaluator(const FiberModel& f)
      : fiber_(f), d_(f.dimension()), sigma_(f.sigma_ref()), x_(f.start()), a_(d_), tmp_(d_), cov_(d_, d_) {
    if (f.is_discrete()) {
      const auto& m = f.terminal();
      k_ = m.size();
      log_w_ = m.weights().array().log();
      b_ = m.atoms().rowwise() - x_.transpose();
      b_sq_ = b_.rowwise().squaredNorm();
      q_.resize(k_);
    } else {
      basis_ = f.delta_eigenvectors();
      lambda_ = f.delta_eigenvalues();
      gain_.resize(d_);
    }
  }

  // Writes E[Y | X_t = z] into `mean` and u into `drift`; returns the
  // normalized energy integrands when `want_energy` is set.
  Integrands eval(double t, const Vector& z, Vector& mean, Vector& drift, bool want_energy) {
    const double s2 = sigma_ * sigma_ * (1.0 - t);
    a_.noalias() = z - x_;
    Integrands out;
    if (fiber_.is_discrete()) {
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < k_; ++j) {
        q_(j) = log_w_(j) + (b_.row(j).dot(a_) - 0.5 * t * b_sq_(j)) / s2;
        top = std::max(top, q_(j));
      }
      double sum = 0.0;
      for (Eigen::Index j = 0; j < k_; ++j) sum += (q_(j) = std::exp(q_(j) - top));
      q_ /= sum;
      tmp_.noalias() = b_.transpose() * q_;  // E[Y - x]
      mean.noalias() = x_ + tmp_;
      if (want_energy) {
        cov_.noalias() = b_.transpose() * q_.asDiagonal() * b_;
        cov_.noalias() -= tmp_ * tmp_.transpose();
        cov_ /= sigma_ * sigma_ * (1.0 - t);
        cov_.diagonal().array() -= 1.0;
        out.mart = 0.5 * cov_.squaredNorm() / (1.0 - t);
      }
    } else {
      gain_ = lambda_.array() / (s2 + t * lambda_.array());
      tmp_.noalias() = basis_.transpose() * a_;
      tmp_.array() *= gain_.array();
      mean.noalias() = basis_ * tmp_;
      mean += x_;
      if (want_energy) out.mart = 0.5 * (gain_.array() - 1.0).square().sum() / (1.0 - t);
    }
    drift.noalias() = (mean - z) / (1.0 - t);
    if (want_energy) out.drift = 0.5 * drift.squaredNorm() / (sigma_ * sigma_);
    return out;
  }

  // Draws Y from the posterior at the state of the last eval call.
  template <class Rng>
  Vector sample_posterior(double t, const Vector& mean, Rng& rng, int* atom) {
    if (fiber_.is_discrete()) {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      double acc = 0.0;
      *atom = static_cast<int>(k_) - 1;
      for (Eigen::Index j = 0; j < k_; ++j)
        if ((acc += q_(j)) >= u) {
          *atom = static_cast<int>(j);
          break;
        }
      return fiber_.terminal().atom(*atom);
    }
    *atom = -1;
    std::normal_distribution<double> g;
    Vector xi(d_);
    for (Eigen::Index i = 0; i < d_; ++i) xi(i) = g(rng) * std::sqrt(sigma_ * sigma_ * (1.0 - t) * gain_(i));
    return mean + basis_ * xi;
  }

 private:
  const FiberModel& fiber_;
  Eigen::Index d_;
  Eigen::Index k_ = 0;
  double sigma_;
  Vector x_;
  Vector a_, tmp_;
  Matrix cov_;
  Vector log_w_, b_sq_, q_;
  Matrix b_;
  Matrix basis_;
  Vector lambda_, gain_;
};

inline void simulate_paths(const FiberModel& fiber, int label, std::size_t first, std::size_t count,
                           const SimulationOptions& o, PathEnsemble& ens) {
  const auto& grid = o.grid;
  const std::size_t K = grid.size();
  const double sigma = fiber.sigma_ref();
  const Eigen::Index d = fiber.dimension();
  const bool randomized = o.energy_rule == EnergyRule::randomized && o.mode == SimulationMode::exact_bridge;
  const double horizon = 1.0 - o.energy_cutoff;
  std::vector<double> deviation(count, 0.0);

  parallel_for(count, [&](std::size_t local) {
    const std::size_t p = first + local;
    const auto row = static_cast<Eigen::Index>(p);
    Engine rng = substream(o.seed, p);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    CoefficientEvaluator ev(fiber);
    Vector mean(d), drift(d), z = fiber.start(), zn(d), zs(d), scratch_mean(d), scratch_drift(d);

    int atom = -1;
    Vector y;
    if (o.mode == SimulationMode::exact_bridge) y = fiber.sample_terminal(rng, &atom);
    double cd = 0.0, cm = 0.0, dev = 0.0;
    std::size_t rec = 0;

    for (std::size_t k = 0; k + 1 < K; ++k) {
      const double t = grid[k];
      const double tn = grid[k + 1];
      const double dt = tn - t;
      const bool left_energy = !randomized && t <= horizon;
      const Integrands f = ev.eval(t, z, mean, drift, left_energy);
      for (Eigen::Index i = 0; i < d; ++i)
        dev = std::max(dev, std::abs(mean(i) - z(i) - (1.0 - t) * drift(i)));
      if (rec < ens.record_index.size() && ens.record_index[rec] == k) {
        ens.M[rec].row(row) = mean.transpose();
        ens.X[rec].row(row) = z.transpose();
        ++rec;
      }
      if (left_energy) {
        cd += f.drift * dt;
        cm += f.mart * dt;
      }

      if (o.mode == SimulationMode::exact_bridge) {
        if (k + 2 == K) {
          zn = y;
        } else {
          // Bridge from (t, z) to (1, y), evaluated at tn.
          const double frac = dt / (1.0 - t);
          const double sd = sigma * std::sqrt(dt * (1.0 - tn) / (1.0 - t));
          for (Eigen::Index i = 0; i < d; ++i) zn(i) = z(i) + frac * (y(i) - z(i)) + sd * g(rng);
        }
        if (randomized) {
          const double ts = t + unif(rng) * dt;
          if (ts <= horizon) {
            // Brownian-bridge interpolation between (t, z) and (tn, zn).
            const double w = (ts - t) / dt;
            const double sd = sigma * std::sqrt((ts - t) * (tn - ts) / dt);
            for (Eigen::Index i = 0; i < d; ++i) zs(i) = z(i) + w * (zn(i) - z(i)) + sd * g(rng);
            const Integrands fs = ev.eval(ts, zs, scratch_mean, scratch_drift, true);
            cd += fs.drift * dt;
            cm += fs.mart * dt;
          }
        }
      } else if (k + 2 == K) {
        // Last step: Y | X_t has law q(t, z) exactly.
        y = ev.sample_posterior(t, mean, rng, &atom);
        zn = y;
      } else {
        for (Eigen::Index i = 0; i < d; ++i) zn(i) = z(i) + drift(i) * dt + sigma * std::sqrt(dt) * g(rng);
      }
      z.swap(zn);
    }
    // Terminal pinning: M_1 = X_1 = Y.
    ens.M.back().row(row) = y.transpose();
    ens.X.back().row(row) = y.transpose();
    ens.terminal.row(row) = y.transpose();
    ens.terminal_atom[p] = atom;
    ens.fiber[p] = label;
    ens.c_drift[p] = cd;
    ens.c_mart[p] = cm;
    deviation[local] = dev;
  });
  for (double v : deviation) ens.max_pathwise_deviation = std::max(ens.max_pathwise_deviation, v);
}

inline PathEnsemble allocate_ensemble(const SimulationOptions& o, Eigen::Index d, double sigma) {
  validate_grid(o.grid);
  if (o.n_paths == 0) throw StructuralError("simulate: n_paths must be positive");
  if (!(o.energy_cutoff >= 0.0 && o.energy_cutoff < 1.0)) throw StructuralError("simulate: bad energy cutoff");
  PathEnsemble e;
  e.grid = o.grid;
  e.record_index = record_indices(o, static_cast<std::size_t>(d));
  for (auto k : e.record_index) e.record_times.push_back(o.grid[k]);
  e.seed = o.seed;
  e.sigma_ref = sigma;
  e.mode = o.mode;
  e.energy_rule = o.energy_rule;
  e.energy_cutoff = o.energy_cutoff;
  const auto n = static_cast<Eigen::Index>(o.n_paths);
  e.fiber.assign(o.n_paths, 0);
  e.terminal = Matrix::Zero(n, d);
  e.terminal_atom.assign(o.n_paths, -1);
  e.M.assign(e.record_index.size(), Matrix::Zero(n, d));
  e.X.assign(e.record_index.size(), Matrix::Zero(n, d));
  e.c_drift.assign(o.n_paths, 0.0);
  e.c_mart.assign(o.n_paths, 0.0);
  return e;
}

}  // namespace detail

inline PathEnsemble simulate_follmer_martingale(const FiberModel& fiber, const SimulationOptions& options) {
  PathEnsemble e = detail::allocate_ensemble(options, fiber.dimension(), fiber.sigma_ref());
  e.fiber_points = fiber.start().transpose();
  detail::simulate_paths(fiber, 0, 0, options.n_paths, options, e);
  return e;
}

struct BijectionReport {
  stats::MeanSe cost_drift;
  stats::MeanSe cost_mart;
  double discrepancy = 0.0;  // |C_drift - C_mart| / max(1, C_mart)
  double max_pathwise_deviation = 0.0;
};

inline BijectionReport phi_bijection_check(const PathEnsemble& e) {
  BijectionReport r;
  r.cost_drift = stats::mean_se(e.c_drift);
  r.cost_mart = stats::mean_se(e.c_mart);
  r.discrepancy = std::abs(r.cost_drift.mean - r.cost_mart.mean) / std::max(1.0, r.cost_mart.mean);
  r.max_pathwise_deviation = e.max_pathwise_deviation;
  return r;
}

// Largest-remainder allocation of n paths proportional to the weights.
inline std::vector<std::size_t> stratified_counts(const Vector& weights, std::size_t n) {
  const auto k = static_cast<std::size_t>(weights.size());
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> rema(k);
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = weights(static_cast<Eigen::Index>(i)) * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t r = 0; used < n; ++r, ++used) ++counts[rema[r % k].second];
  return counts;
}

// Mixes fibers over x ~ mu with stratified path counts. When the fibers are
// discrete and `nu` is given, their mixture must equal nu within 1e-9.
inline PathEnsemble randomize_over_mu(const DiscreteMeasure& mu, const std::vector<FiberModel>& fibers,
                                      const SimulationOptions& options,
                                      const std::optional<DiscreteMeasure>& nu = std::nullopt) {
  if (static_cast<Eigen::Index>(fibers.size()) != mu.size())
    throw StructuralError("randomize_over_mu: one fiber per mu-atom required");
  const double sigma = fibers.front().sigma_ref();
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const auto& f = fibers[static_cast<std::size_t>(i)];
    if (f.dimension() != mu.dimension()) throw StructuralError("randomize_over_mu: dimension mismatch");
    if ((f.start() - mu.atom(i)).norm() > 1e-10)
      throw StructuralError("randomize_over_mu: fiber " + std::to_string(i) + " does not start at its mu-atom");
    if (f.sigma_ref() != sigma) throw StructuralError("randomize_over_mu: fibers use different sigma_ref");
  }
  if (nu) {
    Vector mass = Vector::Zero(nu->size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const auto& f = fibers[static_cast<std::size_t>(i)];
      if (!f.is_discrete()) throw StructuralError("randomize_over_mu: mixture check needs discrete fibers");
      for (Eigen::Index j = 0; j < f.terminal().size(); ++j) {
        Eigen::Index hit = -1;
        for (Eigen::Index l = 0; l < nu->size(); ++l)
          if ((nu->atom(l) - f.terminal().atom(j)).norm() <= 1e-9) hit = l;
        if (hit < 0) throw StructuralError("randomize_over_mu: fiber atom outside supp(nu)");
        mass(hit) += mu.weight(i) * f.terminal().weight(j);
      }
    }
    const double err = (mass - nu->weights()).cwiseAbs().maxCoeff();
    if (err > 1e-9)
      throw StructuralError("randomize_over_mu: mixture of fibers differs from nu by " + std::to_string(err));
  }
  PathEnsemble e = detail::allocate_ensemble(options, mu.dimension(), sigma);
  e.fiber_points = mu.atoms();
  const auto counts = stratified_counts(mu.weights(), options.n_paths);
  std::size_t first = 0;
  for (std::size_t i = 0; i < fibers.size(); ++i) {
    detail::simulate_paths(fibers[i], static_cast<int>(i), first, counts[i], options, e);
    first += counts[i];
  }
  return e;
}

// Fibers of a coupling over supp(mu) x supp(nu), keeping the atoms with
// positive mass.
inline std::vector<FiberModel> fibers_from_coupling(const Coupling& m, const DiscreteMeasure& mu,
                                                    const DiscreteMeasure& nu, double sigma_ref = 1.0) {
  std::vector<FiberModel> out;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < nu.size(); ++j)
      if (m.weights(i, j) > 0.0) keep.push_back(j);
    Matrix atoms(static_cast<Eigen::Index>(keep.size()), nu.dimension());
    Vector w(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      atoms.row(static_cast<Eigen::Index>(r)) = nu.atoms().row(keep[r]);
      w(static_cast<Eigen::Index>(r)) = m.weights(i, keep[r]);
    }
    w /= w.sum();
    out.push_back(FiberModel::discrete(mu.atom(i), DiscreteMeasure(atoms, w), sigma_ref));
  }
  return out;
}

// sum_i mu_i * (mean energy over the paths of fiber i).
inline double aggregated_energy(const PathEnsemble& e, const Vector& mu_weights, bool martingale_cost) {
  const auto& c = martingale_cost ? e.c_mart : e.c_drift;
  std::vector<double> sum(static_cast<std::size_t>(mu_weights.size()), 0.0);
  std::vector<std::size_t> cnt(sum.size(), 0);
  for (std::size_t p = 0; p < e.size(); ++p) {
    sum[static_cast<std::size_t>(e.fiber[p])] += c[p];
    ++cnt[static_cast<std::size_t>(e.fiber[p])];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (cnt[i]) total += mu_weights(static_cast<Eigen::Index>(i)) * sum[i] / static_cast<double>(cnt[i]);
  return total;
}

}  // namespace mbridge
