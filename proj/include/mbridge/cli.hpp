#pragma once

// Command-line front end. Each subcommand writes a JSON report (schema
// "mbridge/1", with the run manifest embedded) and CSV side files into --out.
// Wall-clock time goes to a separate timing.json so that reports from
// identical invocations are byte-identical.
//
// Exit codes: 0 success, 1 structural error (bad flags, malformed input),
// 2 not converged / checks not passing, 3 infeasible input.

#include "mbridge/certify.hpp"
#include "mbridge/dynamics.hpp"
#include "mbridge/errors.hpp"
#include "mbridge/filtering.hpp"
#include "mbridge/gaussian.hpp"
#include "mbridge/io.hpp"
#include "mbridge/msb_solver.hpp"
#include "mbridge/threepoint.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mbridge::cli {

inline constexpr const char* kVersion = "1.0.0";

enum Exit : int { kOk = 0, kStructural = 1, kNotConverged = 2, kInfeasible = 3 };

using io::json;

// Command name, inputs and resolved settings of one run.
struct RunManifest {
  std::string command;
  json inputs = json::object();
  json config = json::object();
  json metrics = json::object();

  json to_json() const {
    json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["inputs"] = inputs;
    j["config"] = config;
    j["metrics"] = metrics;
    return j;
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
    if (cell.empty() || used != cell.size() || !std::isfinite(v))
      throw StructuralError("flag " + flag + ": '" + cell + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw StructuralError("flag " + flag + ": empty list");
  return out;
}

// A covariance flag is either a comma list (diagonal) or a Gaussian JSON
// file, from which the covariance and mean are taken.
inline GaussianSpec covariance_argument(const std::string& text, const std::string& flag) {
  if (std::filesystem::exists(text)) return io::load_gaussian(text);
  const auto v = parse_list(text, flag);
  Vector d = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  for (double x : v)
    if (!(x > 0.0)) throw StructuralError("flag " + flag + ": diagonal entries must be positive");
  return GaussianSpec(Vector::Zero(d.size()), d.asDiagonal());
}

inline void prepare_out(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StructuralError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline json report_header(const RunManifest& m) {
  json j;
  j["schema"] = io::kSchema;
  j["manifest"] = m.to_json();
  return j;
}

inline void write_timing(const std::string& dir, const std::string& command, double seconds) {
  json t;
  t["schema"] = io::kSchema;
  t["command"] = command;
  t["wall_seconds"] = seconds;
  io::write_text(join(dir, "timing.json"), io::dump(t));
}

inline json mean_se_json(const stats::MeanSe& m) {
  json j;
  j["mean"] = m.mean;
  j["se"] = m.se;
  return j;
}

inline std::string single_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

inline std::string fixed(double x, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

struct SolveArgs {
  std::string mu, nu, out = "mbridge-out";
  double tol = 1e-10;
  int max_iter = 10000;
  double h_max = 1e6;
};

inline SolverConfig solver_config(double tol, int max_iter, double h_max) {
  SolverConfig c;
  c.marginal_tolerance = tol;
  c.martingale_tolerance = tol;
  c.max_outer_iterations = max_iter;
  c.h_max = h_max;
  return c;
}

inline json solver_config_json(const SolverConfig& c) {
  json j;
  j["marginal_tolerance"] = c.marginal_tolerance;
  j["martingale_tolerance"] = c.martingale_tolerance;
  j["max_outer_iterations"] = c.max_outer_iterations;
  j["newton_max_steps"] = c.newton_max_steps;
  j["newton_gradient_tolerance"] = c.newton_gradient_tolerance;
  j["h_max"] = c.h_max;
  return j;
}

inline int cmd_solve(const SolveArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const DiscreteMeasure mu = io::load_discrete(a.mu), nu = io::load_discrete(a.nu);
  const SolverConfig cfg = solver_config(a.tol, a.max_iter, a.h_max);
  cfg.validate();
  detail::prepare_out(a.out);
  const SolveReport rep = sinkhorn_msb(mu, nu, cfg);

  RunManifest m;
  m.command = "solve";
  m.inputs["mu"] = a.mu;
  m.inputs["nu"] = a.nu;
  m.config = solver_config_json(cfg);
  m.metrics["iterations"] = rep.iterations;
  json r = detail::report_header(m);
  r["converged"] = rep.converged;
  r["iterations"] = rep.iterations;
  r["primal_value"] = rep.primal_value;
  r["dual_value"] = rep.dual_value;
  r["marginal_residual"] = rep.marginal_residual;
  r["martingale_residual"] = rep.martingale_residual;
  r["potentials"]["phi"] = io::to_json(rep.potentials.phi);
  r["potentials"]["psi"] = io::to_json(rep.potentials.psi);
  r["potentials"]["h"] = io::to_json(rep.potentials.h);
  r["coupling"] = io::to_json(rep.coupling.weights);
  r["coupling_csv"] = "coupling.csv";
  r["dual_history"] = io::to_json(Vector(Eigen::Map<const Vector>(
      rep.dual_history.data(), static_cast<Eigen::Index>(rep.dual_history.size()))));
  io::write_text(detail::join(a.out, "report.json"), io::dump(r));

  std::vector<std::string> header{"mu_index"};
  for (Eigen::Index j = 0; j < nu.size(); ++j) header.push_back("nu_" + std::to_string(j));
  io::CsvWriter csv(header);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const Vector row = rep.coupling.weights.row(i).transpose();
    csv.row({static_cast<long long>(i)}, std::vector<double>(row.begin(), row.end()));
  }
  csv.save(detail::join(a.out, "coupling.csv"));
  detail::write_timing(a.out, "solve", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  out << (rep.converged ? "converged" : "NOT converged") << " after " << rep.iterations
      << " iterations; primal " << io::format_double(rep.primal_value) << ", dual "
      << io::format_double(rep.dual_value) << "; report in " << a.out << "\n";
  return rep.converged ? kOk : kNotConverged;
}

struct GaussianArgs {
  std::string sigma0, sigma1, out = "mbridge-out";
  int grid_points = 101;
};

inline int cmd_gaussian(const GaussianArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const GaussianSpec s0 = detail::covariance_argument(a.sigma0, "--sigma0");
  const GaussianSpec s1 = detail::covariance_argument(a.sigma1, "--sigma1");
  if (a.grid_points < 2) throw StructuralError("flag --grid-points: need at least 2");
  const GaussianMsb g = gaussian_msb_closed_form(s0, s1);
  const BassComparison b = bass_comparison_gaussian(g.sigma0, g.sigma1, a.grid_points);
  const double closed = energy_closed_form(g.delta);
  const double quad = weighted_energy_quadrature(g.delta);
  const double budget = (volatility_variance_budget(g.delta) - g.delta).cwiseAbs().maxCoeff();
  detail::prepare_out(a.out);

  RunManifest m;
  m.command = "gaussian";
  m.inputs["sigma0"] = a.sigma0;
  m.inputs["sigma1"] = a.sigma1;
  m.config["grid_points"] = a.grid_points;
  m.metrics["dimension"] = g.dimension();
  json r = detail::report_header(m);
  r["dimension"] = g.dimension();
  r["entropy_value"] = g.entropy_value;
  r["delta"] = io::to_json(g.delta);
  r["h_matrix"] = io::to_json(g.h_matrix);
  r["psi_quadratic"] = io::to_json(g.psi_quadratic);
  r["phi_bar"]["quadratic"] = io::to_json(g.phi_bar_quadratic);
  r["phi_bar"]["constant"] = g.phi_bar_constant;
  r["base_covariance"] = io::to_json(g.base_covariance);
  r["shift"] = io::to_json(g.shift);
  r["weighted_energy"]["closed_form"] = closed;
  r["weighted_energy"]["quadrature"] = quad;
  r["weighted_energy"]["difference"] = std::abs(closed - quad);
  r["variance_budget_error"] = budget;
  r["bass"]["volatility"] = io::to_json(b.bass_volatility);
  r["bass"]["eigenvalues"] = io::to_json(b.eigenvalues);
  r["bass"]["max_schedule_discrepancy"] = b.max_discrepancy;
  r["schedule_csv"] = "schedule.csv";
  io::write_text(detail::join(a.out, "report.json"), io::dump(r));

  // Follmer volatility eigenvalues and the spectral clock, per eigenvalue.
  std::vector<std::string> header{"t"};
  for (Eigen::Index k = 0; k < g.dimension(); ++k) header.push_back("sigma_" + std::to_string(k));
  for (Eigen::Index k = 0; k < g.dimension(); ++k) header.push_back("tau_" + std::to_string(k));
  io::CsvWriter csv(header);
  for (double t : b.grid) {
    std::vector<double> row{t};
    for (Eigen::Index k = 0; k < g.dimension(); ++k) {
      const double l = b.eigenvalues(k);
      row.push_back(l / ((1.0 - t) + t * l));
    }
    for (Eigen::Index k = 0; k < g.dimension(); ++k) row.push_back(spectral_time_change(b.eigenvalues(k), t));
    csv.row(row);
  }
  csv.save(detail::join(a.out, "schedule.csv"));
  detail::write_timing(a.out, "gaussian", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  out << "entropy " << io::format_double(g.entropy_value) << ", weighted energy " << io::format_double(closed)
      << "; report in " << a.out << "\n";
  return kOk;
}

struct SimulateArgs {
  std::string mu, nu, delta, x, out = "mbridge-out";
  std::size_t paths = 1000, steps = 100, export_paths = 1000, record_stride = 0;
  std::uint64_t seed = 42;
  std::string mode = "exact", energy = "left";
  double sigma = 1.0, cutoff = 1e-6, tol = 1e-10;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  SimulationOptions o;
  o.grid = uniform_grid(a.steps);
  o.n_paths = a.paths;
  o.seed = a.seed;
  o.energy_cutoff = a.cutoff;
  o.record_stride = a.record_stride;
  if (a.mode == "exact") o.mode = SimulationMode::exact_bridge;
  else if (a.mode == "euler") o.mode = SimulationMode::euler;
  else throw StructuralError("flag --mode: expected 'exact' or 'euler'");
  if (a.energy == "left") o.energy_rule = EnergyRule::left_endpoint;
  else if (a.energy == "randomized") o.energy_rule = EnergyRule::randomized;
  else throw StructuralError("flag --energy: expected 'left' or 'randomized'");
  if (a.paths == 0) throw StructuralError("flag --paths: must be positive");

  RunManifest m;
  m.command = "simulate";
  m.config["paths"] = a.paths;
  m.config["steps"] = a.steps;
  m.config["seed"] = a.seed;
  m.config["mode"] = a.mode;
  m.config["energy_rule"] = a.energy;
  m.config["energy_cutoff"] = a.cutoff;
  m.config["sigma_ref"] = a.sigma;

  const bool discrete = !a.mu.empty() || !a.nu.empty();
  if (discrete == !a.delta.empty())
    throw StructuralError("simulate: give either --mu and --nu, or --delta");
  PathEnsemble e;
  json target = json::object();
  std::optional<DiscreteMeasure> nu;
  SolveReport rep;
  if (discrete) {
    if (a.mu.empty() || a.nu.empty()) throw StructuralError("simulate: --mu and --nu go together");
    const DiscreteMeasure mu = io::load_discrete(a.mu);
    nu = io::load_discrete(a.nu);
    m.inputs["mu"] = a.mu;
    m.inputs["nu"] = a.nu;
    const SolverConfig cfg = solver_config(a.tol, 10000, 1e6);
    m.config["solver"] = solver_config_json(cfg);
    rep = sinkhorn_msb(mu, *nu, cfg);
    if (!rep.converged) throw NotConverged("simulate: solver did not converge; nothing simulated");
    e = randomize_over_mu(mu, fibers_from_coupling(rep.coupling, mu, *nu, a.sigma), o, nu);
    m.metrics["solver_iterations"] = rep.iterations;
    target["entropy_value"] = rep.primal_value;
    e.fiber_points = mu.atoms();
  } else {
    const GaussianSpec d = detail::covariance_argument(a.delta, "--delta");
    Vector x = Vector::Zero(d.dimension());
    if (!a.x.empty()) {
      const auto v = detail::parse_list(a.x, "--x");
      if (static_cast<Eigen::Index>(v.size()) != d.dimension()) throw StructuralError("flag --x: dimension mismatch");
      x = Eigen::Map<const Vector>(v.data(), d.dimension());
    }
    m.inputs["delta"] = a.delta;
    m.inputs["x"] = io::to_json(x);
    e = simulate_follmer_martingale(FiberModel::gaussian(x, d.covariance, a.sigma), o);
    target["weighted_energy_closed_form"] = energy_closed_form(d.covariance / (a.sigma * a.sigma));
  }
  detail::prepare_out(a.out);
  const BijectionReport br = phi_bijection_check(e);
  json r = detail::report_header(m);
  r["paths"] = e.size();
  r["grid_points"] = e.grid.size();
  r["record_times"] = e.record_times.size();
  r["energy"]["drift"] = detail::mean_se_json(br.cost_drift);
  r["energy"]["martingale"] = detail::mean_se_json(br.cost_mart);
  r["energy"]["relative_discrepancy"] = br.discrepancy;
  r["max_pathwise_deviation"] = br.max_pathwise_deviation;
  r["target"] = target;
  const Eigen::Index dim = e.dimension();
  const Matrix& mt = e.M.back();
  r["terminal"]["mean"] = io::to_json(Vector(mt.colwise().mean().transpose()));
  if (nu) {
    Vector freq = Vector::Zero(nu->size());
    for (Eigen::Index p = 0; p < mt.rows(); ++p)
      for (Eigen::Index j = 0; j < nu->size(); ++j)
        if ((mt.row(p).transpose() - nu->atom(j)).norm() <= 1e-9) freq(j) += 1.0;
    freq /= static_cast<double>(mt.rows());
    r["terminal"]["frequencies"] = io::to_json(freq);
    r["terminal"]["tv_to_nu"] = stats::tv_distance(freq, nu->weights());
  }
  r["paths_csv"] = "paths.csv";
  io::write_text(detail::join(a.out, "summary.json"), io::dump(r));

  std::vector<std::string> header{"path_id", "t"};
  for (Eigen::Index c = 0; c < dim; ++c) header.push_back("M_" + std::to_string(c));
  for (Eigen::Index c = 0; c < dim; ++c) header.push_back("X_" + std::to_string(c));
  header.push_back("fiber");
  io::CsvWriter csv(header);
  const std::size_t n_export = std::min(a.export_paths, e.size());
  for (std::size_t p = 0; p < n_export; ++p)
    for (std::size_t k = 0; k < e.record_times.size(); ++k) {
      std::vector<double> row{e.record_times[k]};
      const auto pr = static_cast<Eigen::Index>(p);
      for (Eigen::Index c = 0; c < dim; ++c) row.push_back(e.M[k](pr, c));
      for (Eigen::Index c = 0; c < dim; ++c) row.push_back(e.X[k](pr, c));
      row.push_back(static_cast<double>(e.fiber[p]));
      csv.row({static_cast<long long>(p)}, row);
    }
  csv.save(detail::join(a.out, "paths.csv"));
  detail::write_timing(a.out, "simulate", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  out << "C_drift " << io::format_double(br.cost_drift.mean) << " +- " << io::format_double(br.cost_drift.se)
      << ", C_mart " << io::format_double(br.cost_mart.mean) << " +- " << io::format_double(br.cost_mart.se)
      << "; summary in " << a.out << "\n";
  return kOk;
}

struct FilterArgs {
  std::string fiber, out = "mbridge-out";
  std::size_t paths = 20000, export_paths = 100, obs_steps = 400;
  std::uint64_t seed = 42;
  std::string sigmas = "0.5,1,2", checkpoints = "1", wonham_checkpoints = "1,4";
  double ds = 1e-3;
  double ks_threshold = 0.0;  // 0: three times the 5% two-sample critical value
};

inline int cmd_filter(const FilterArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  if (a.paths < 2) throw StructuralError("flag --paths: need at least 2");
  const auto sigmas = detail::parse_list(a.sigmas, "--sigmas");
  const auto cps = detail::parse_list(a.checkpoints, "--checkpoints");
  const auto wcps = detail::parse_list(a.wonham_checkpoints, "--wonham-checkpoints");
  for (double s : sigmas)
    if (!(s > 0.0)) throw StructuralError("flag --sigmas: entries must be positive");
  for (double s : cps)
    if (!(s >= 0.0)) throw StructuralError("flag --checkpoints: entries must be nonnegative");
  FiberModel fiber = FiberModel::discrete(Vector::Constant(1, 0.5), DiscreteMeasure::line({0, 1}, {0.5, 0.5}));
  if (!a.fiber.empty()) {
    const DiscreteMeasure t = io::load_discrete(a.fiber);
    fiber = FiberModel::discrete(t.atoms().transpose() * t.weights(), t);
  }
  const double threshold =
      a.ks_threshold > 0.0 ? a.ks_threshold : 3.0 * 1.36 * std::sqrt(2.0 / static_cast<double>(a.paths));

  const SigmaInvarianceReport si = sigma_invariance_test(fiber, sigmas, cps, a.paths, a.seed);
  WonhamOptions wo;
  wo.checkpoints = wcps;
  wo.ds = a.ds;
  wo.n_paths = a.paths;
  wo.seed = a.seed + 1;
  const WonhamReport wr = wonham_sde_crosscheck(wo);
  double consistency = 0.0;
  for (double s : cps)
    if (s > 0.0) consistency = std::max(consistency, dynamics_consistency_ks(fiber, s, a.paths, a.seed + 2));
  double wonham_ks = 0.0;
  for (double k : wr.ks) wonham_ks = std::max(wonham_ks, k);
  const bool freq_ok = std::abs(wr.frequency_high - 0.5) < 0.01 && std::abs(wr.frequency_low - 0.5) < 0.01;
  const bool passed = si.max_ks < threshold && wonham_ks < threshold && consistency < threshold &&
                      wr.violations == 0 && freq_ok;
  detail::prepare_out(a.out);

  RunManifest m;
  m.command = "filter";
  m.inputs["fiber"] = a.fiber.empty() ? json("bernoulli") : json(a.fiber);
  m.config["paths"] = a.paths;
  m.config["seed"] = a.seed;
  m.config["sigmas"] = sigmas;
  m.config["checkpoints"] = cps;
  m.config["wonham_checkpoints"] = wcps;
  m.config["ds"] = a.ds;
  m.config["ks_threshold"] = threshold;
  json r = detail::report_header(m);
  r["passed"] = passed;
  r["sigma_invariance"]["sigmas"] = sigmas;
  r["sigma_invariance"]["checkpoints"] = cps;
  json ks = json::array();
  for (std::size_t c = 0; c < cps.size(); ++c) {
    json entry;
    entry["s"] = cps[c];
    entry["ks"] = io::to_json(si.ks[c]);
    for (double sg : sigmas) entry["martingale_times"].push_back(info_time_change(sg, cps[c]));
    ks.push_back(entry);
  }
  r["sigma_invariance"]["per_checkpoint"] = ks;
  r["sigma_invariance"]["max_ks"] = si.max_ks;
  r["wonham"]["checkpoints"] = wr.checkpoints;
  r["wonham"]["ks"] = wr.ks;
  r["wonham"]["euler_violations"] = wr.violations;
  r["wonham"]["horizon"] = wr.horizon;
  r["wonham"]["frequency_low"] = wr.frequency_low;
  r["wonham"]["frequency_high"] = wr.frequency_high;
  r["wonham"]["exact_frequency_high"] = wr.exact_frequency_high;
  r["dynamics_consistency_ks"] = consistency;
  r["observations_csv"] = "observations.csv";
  io::write_text(detail::join(a.out, "report.json"), io::dump(r));

  ObservationOptions oo;
  oo.horizon = *std::max_element(wcps.begin(), wcps.end());
  oo.steps = a.obs_steps;
  oo.n_paths = std::max<std::size_t>(1, a.export_paths);
  oo.seed = a.seed + 3;
  const ObservationPaths obs = simulate_observations(fiber, oo);
  const Eigen::Index d = fiber.dimension();
  std::vector<std::string> header{"path_id", "s"};
  for (Eigen::Index c = 0; c < d; ++c) header.push_back("R_" + std::to_string(c));
  for (Eigen::Index c = 0; c < d; ++c) header.push_back("Z_" + std::to_string(c));
  io::CsvWriter csv(header);
  for (std::size_t p = 0; p < std::min(a.export_paths, obs.size()); ++p)
    for (std::size_t k = 0; k < obs.record_s.size(); ++k) {
      std::vector<double> row{obs.record_s[k]};
      const auto pr = static_cast<Eigen::Index>(p);
      for (Eigen::Index c = 0; c < d; ++c) row.push_back(obs.R[k](pr, c));
      for (Eigen::Index c = 0; c < d; ++c) row.push_back(obs.Z[k](pr, c));
      csv.row({static_cast<long long>(p)}, row);
    }
  csv.save(detail::join(a.out, "observations.csv"));
  detail::write_timing(a.out, "filter", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  out << "sigma-invariance max KS " << io::format_double(si.max_ks) << ", Wonham max KS "
      << io::format_double(wonham_ks) << ", threshold " << io::format_double(threshold) << ": "
      << (passed ? "pass" : "FAIL") << "\n";
  return passed ? kOk : kNotConverged;
}

struct ThreePointArgs {
  double p1 = 0, q1 = 0, p2 = 0, q2 = 0;
  std::string out = "mbridge-out";
};

inline json solution_json(const ThreePointSolution& s) {
  json j;
  j["u"] = s.u;
  j["v"] = s.v;
  j["matrix"] = io::to_json(s.coupling);
  j["value"] = s.value;
  j["system_residual"] = io::to_json(Vector(s.residual));
  j["iterations"] = s.iterations;
  j["boundary"] = s.boundary;
  j["vanishing_entries"] = s.vanishing_entries;
  return j;
}

inline void print_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << "   ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << " " << std::setw(11) << detail::fixed(m(i, j), 8);
    out << "\n";
  }
}

inline int cmd_threepoint(const ThreePointArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const ThreePointInstance t = ThreePointInstance::from_free(a.p1, a.q1, a.p2, a.q2);
  const ThreePointSolution e = entropy_minimize(t);
  const ThreePointSolution b = bass_minimize(t);
  detail::prepare_out(a.out);

  RunManifest m;
  m.command = "threepoint";
  m.inputs["mu_weights"] = {t.p1, t.q1, t.r1};
  m.inputs["nu_weights"] = {t.p2, t.q2, t.r2};
  m.metrics["entropy_iterations"] = e.iterations;
  m.metrics["bass_iterations"] = b.iterations;
  json r = detail::report_header(m);
  r["entropy"] = solution_json(e);
  r["entropy"]["gradient"] = io::to_json(Vector(entropy_gradient(t, e.u, e.v)));
  r["bass"] = solution_json(b);
  r["gap"]["du"] = e.u - b.u;
  r["gap"]["dv"] = e.v - b.v;
  r["max_entry_difference"] = (e.coupling - b.coupling).cwiseAbs().maxCoeff();
  if (!e.boundary) {
    r["bass_system_at_entropy_optimizer"] = io::to_json(Vector(bass_system_residual(t, e.u, e.v)));
    r["entropy_gradient_at_bass_optimizer"] = io::to_json(Vector(entropy_gradient(t, b.u, b.v)));
    const Eigen::Vector2d z = solve_bass_system(t, {e.u, e.v});
    r["bass"]["system_newton_agreement"] = (z - Eigen::Vector2d(b.u, b.v)).lpNorm<Eigen::Infinity>();
    const SolveReport rep = sinkhorn_msb(t.mu(), t.nu());
    r["entropy"]["sinkhorn_agreement"] = (rep.coupling.weights - e.coupling).cwiseAbs().maxCoeff();
  }
  io::write_text(detail::join(a.out, "report.json"), io::dump(r));
  detail::write_timing(a.out, "threepoint",
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  out << "mu = " << detail::fixed(t.p1, 6) << " d(-1) + " << detail::fixed(t.q1, 6) << " d(0) + "
      << detail::fixed(t.r1, 6) << " d(1)\n";
  out << "nu = " << detail::fixed(t.p2, 6) << " d(-2) + " << detail::fixed(t.q2, 6) << " d(0) + "
      << detail::fixed(t.r2, 6) << " d(2)\n\n";
  out << "entropy optimizer  (u, v) = (" << detail::fixed(e.u, 8) << ", " << detail::fixed(e.v, 8)
      << ")  H = " << detail::fixed(e.value, 10) << "\n";
  print_matrix(out, e.coupling);
  out << "bass optimizer     (u, v) = (" << detail::fixed(b.u, 8) << ", " << detail::fixed(b.v, 8)
      << ")  G = " << detail::fixed(b.value, 10) << "\n";
  print_matrix(out, b.coupling);
  std::ostringstream gap;
  gap << std::scientific << std::setprecision(3) << "(" << e.u - b.u << ", " << e.v - b.v << ")";
  out << "gap (uE - uB, vE - vB) = " << gap.str() << "\n";
  if (e.boundary) {
    out << "boundary solution; vanishing entries:";
    for (const auto& s : e.vanishing_entries) out << " " << s;
    out << "\n";
  }
  return kOk;
}

struct CertifyArgs {
  std::string mu, nu, out = "mbridge-out";
  double tol = 1e-10;
  int max_iter = 10000;
};

inline int cmd_certify(const CertifyArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const DiscreteMeasure mu = io::load_discrete(a.mu), nu = io::load_discrete(a.nu);
  const SolverConfig cfg = solver_config(a.tol, a.max_iter, 1e6);
  cfg.validate();
  detail::prepare_out(a.out);
  const Certificate c = certify_value_chain(mu, nu, cfg);
  const CertifyThresholds th;

  RunManifest m;
  m.command = "certify";
  m.inputs["mu"] = a.mu;
  m.inputs["nu"] = a.nu;
  m.config = solver_config_json(cfg);
  m.metrics["iterations"] = c.report.iterations;
  json r = detail::report_header(m);
  r["passed"] = c.passed(th);
  r["values"]["primal"] = c.primal;
  r["values"]["dual"] = c.dual;
  r["values"]["variational"] = c.vp;
  r["values"]["schrodinger"] = c.sp_value;
  r["values"]["max_covariance"] = c.mcov_value;
  r["gaps"]["primal_dual"] = c.primal_dual_gap();
  r["gaps"]["primal_variational"] = c.primal_vp_gap();
  r["schrodinger_residuals"]["ss1"] = c.ss1_residual;
  r["schrodinger_residuals"]["ss2"] = c.ss2_residual;
  r["conditional_error"] = c.conditional_error;
  r["reference_identity_residual"] = c.reference_identity_residual;
  r["base_measure"] = io::measure_to_json(c.base);
  r["warnings"] = c.warnings;
  json thj;
  thj["primal_dual"] = th.primal_dual;
  thj["primal_variational"] = th.primal_vp;
  thj["conditional"] = th.conditional;
  thj["schrodinger"] = th.schrodinger;
  thj["reference_identity"] = th.reference_identity;
  r["thresholds"] = thj;
  io::write_text(detail::join(a.out, "certificate.json"), io::dump(r));
  detail::write_timing(a.out, "certify", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  out << "P - D = " << io::format_double(c.primal - c.dual) << ", P - VP = " << io::format_double(c.primal - c.vp)
      << ": " << (c.passed(th) ? "pass" : "FAIL") << "\n";
  return c.passed(th) ? kOk : kNotConverged;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Martingale Schrodinger bridges: solver, closed forms, simulation and filtering checks", "mbridge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SolveArgs sa;
  auto* solve = app.add_subcommand("solve", "Solve the martingale Schrodinger bridge between two discrete measures");
  solve->add_option("--mu", sa.mu, "Source measure JSON")->required();
  solve->add_option("--nu", sa.nu, "Target measure JSON")->required();
  solve->add_option("--tol", sa.tol, "Marginal and martingale tolerance");
  solve->add_option("--max-iter", sa.max_iter, "Outer iteration cap");
  solve->add_option("--h-max", sa.h_max, "Divergence guard on |h|");
  solve->add_option("--out", sa.out, "Output directory");

  GaussianArgs ga;
  auto* gauss = app.add_subcommand("gaussian", "Closed forms for Gaussian marginals");
  gauss->add_option("--sigma0", ga.sigma0, "Source covariance: diagonal list or Gaussian JSON")->required();
  gauss->add_option("--sigma1", ga.sigma1, "Target covariance: diagonal list or Gaussian JSON")->required();
  gauss->add_option("--grid-points", ga.grid_points, "Schedule grid size");
  gauss->add_option("--out", ga.out, "Output directory");

  SimulateArgs sm;
  auto* sim = app.add_subcommand("simulate", "Simulate the Follmer martingale");
  sim->add_option("--mu", sm.mu, "Source measure JSON (with --nu)");
  sim->add_option("--nu", sm.nu, "Target measure JSON (with --mu)");
  sim->add_option("--delta", sm.delta, "Gaussian fiber covariance: diagonal list or Gaussian JSON");
  sim->add_option("--x", sm.x, "Gaussian fiber start point, comma list");
  sim->add_option("--paths", sm.paths, "Number of paths");
  sim->add_option("--steps", sm.steps, "Uniform time steps");
  sim->add_option("--seed", sm.seed, "Random seed");
  sim->add_option("--mode", sm.mode, "exact or euler");
  sim->add_option("--energy", sm.energy, "left or randomized");
  sim->add_option("--sigma", sm.sigma, "Reference volatility");
  sim->add_option("--cutoff", sm.cutoff, "Energy integrands stop at 1 - cutoff");
  sim->add_option("--tol", sm.tol, "Solver tolerance for discrete inputs");
  sim->add_option("--export-paths", sm.export_paths, "Paths written to paths.csv");
  sim->add_option("--record-stride", sm.record_stride, "Record every k-th grid point (0 = auto)");
  sim->add_option("--out", sm.out, "Output directory");

  FilterArgs fa;
  auto* filt = app.add_subcommand("filter", "Filtering checks: sigma invariance, Wonham, consistency");
  filt->add_option("--fiber", fa.fiber, "Discrete terminal law JSON (default: Bernoulli on {0, 1})");
  filt->add_option("--paths", fa.paths, "Paths per sample");
  filt->add_option("--seed", fa.seed, "Random seed");
  filt->add_option("--sigmas", fa.sigmas, "Reference volatilities, comma list");
  filt->add_option("--checkpoints", fa.checkpoints, "Observation times s, comma list");
  filt->add_option("--wonham-checkpoints", fa.wonham_checkpoints, "Observation times for the Wonham check");
  filt->add_option("--ds", fa.ds, "Euler step in s");
  filt->add_option("--ks-threshold", fa.ks_threshold, "Pass threshold (default 3 x 5% critical value)");
  filt->add_option("--export-paths", fa.export_paths, "Paths written to observations.csv");
  filt->add_option("--obs-steps", fa.obs_steps, "Grid steps for observations.csv");
  filt->add_option("--out", fa.out, "Output directory");

  ThreePointArgs ta;
  auto* tp = app.add_subcommand("threepoint", "Entropy and Bass optimizers for three-point marginals");
  tp->add_option("--p1", ta.p1, "mu weight at -1")->required();
  tp->add_option("--q1", ta.q1, "mu weight at 0")->required();
  tp->add_option("--p2", ta.p2, "nu weight at -2")->required();
  tp->add_option("--q2", ta.q2, "nu weight at 0")->required();
  tp->add_option("--out", ta.out, "Output directory");

  CertifyArgs ca;
  auto* cert = app.add_subcommand("certify", "Primal = dual = variational value report");
  cert->add_option("--mu", ca.mu, "Source measure JSON")->required();
  cert->add_option("--nu", ca.nu, "Target measure JSON")->required();
  cert->add_option("--tol", ca.tol, "Solver tolerance");
  cert->add_option("--max-iter", ca.max_iter, "Outer iteration cap");
  cert->add_option("--out", ca.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "mbridge: error: " << detail::single_line(e.what()) << "\n";
    return kStructural;
  }

  try {
    if (solve->parsed()) return cmd_solve(sa, out);
    if (gauss->parsed()) return cmd_gaussian(ga, out);
    if (sim->parsed()) return cmd_simulate(sm, out);
    if (filt->parsed()) return cmd_filter(fa, out);
    if (tp->parsed()) return cmd_threepoint(ta, out);
    if (cert->parsed()) return cmd_certify(ca, out);
  } catch (const NotInConvexOrder& e) {
    err << "mbridge: infeasible: " << detail::single_line(e.what()) << "\n";
    return kInfeasible;
  } catch (const NotIrreducible& e) {
    err << "mbridge: infeasible: " << detail::single_line(e.what()) << "\n";
    return kInfeasible;
  } catch (const InfeasibleParameters& e) {
    err << "mbridge: infeasible: " << detail::single_line(e.what()) << "\n";
    return kInfeasible;
  } catch (const NotConverged& e) {
    err << "mbridge: not converged: " << detail::single_line(e.what()) << "\n";
    return kNotConverged;
  } catch (const DualDivergence& e) {
    err << "mbridge: not converged: " << detail::single_line(e.what()) << "\n";
    return kNotConverged;
  } catch (const DegenerateFiber& e) {
    err << "mbridge: not converged: " << detail::single_line(e.what()) << "\n";
    return kNotConverged;
  } catch (const NumericalError& e) {
    err << "mbridge: not converged: " << detail::single_line(e.what()) << "\n";
    return kNotConverged;
  } catch (const std::exception& e) {
    err << "mbridge: error: " << detail::single_line(e.what()) << "\n";
    return kStructural;
  }
  return kStructural;
}

}  // namespace mbridge::cli
