/**
 * @file cli.hpp
 * @brief The `mvlq` command line: solve, simulate, cost, verify and
 *        systemic-risk, with CSV and JSON artifacts in an output directory.
 *
 * Exit codes: 0 success, 1 verification failure, 2 configuration error,
 * 3 numerical failure.
 */

#pragma once

#include "mvlq/checks.hpp"
#include "mvlq/io.hpp"
#include "mvlq/policy.hpp"
#include "mvlq/riccati.hpp"
#include "mvlq/simulator.hpp"
#include "mvlq/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace mvlq::cli {

enum ExitCode : int { kSuccess = 0, kVerificationFailed = 1, kConfigError = 2, kNumericalFailure = 3 };

inline constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

struct RunConfig {
  std::string command;
  std::string check;
  std::string model;
  std::string out = ".";
  std::uint64_t seed = 0;
  bool has_seed = false;
  Index particles = 1000;
  std::size_t paths = 100;
  double dt = 1e-3;
  double riccati_step = 1e-3;
  double t0 = 0.0;
  double theta = kUnset;
  double epsilon = kUnset;
  double delta = 0.01;
  std::size_t draws = 100;
  std::size_t pairs = 10;
  std::string init = "point";
  std::string control = "optimal";
  std::vector<Index> chaos_particles{250, 1000, 4000};
  std::size_t node_stride = 1;
  Index particle_stride = 1;
  unsigned threads = 0;
  SystemicRiskParams risk;
};

/**
 * Initial law: `point` (origin), `point:x1,x2`, `gaussian:m1,m2|c11,c12;c21,c22`
 * or `csv:<path>` (one particle per row).
 */
inline InitialSpec parse_initial_spec(const std::string& text, Index d) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string body = colon == std::string::npos ? std::string() : text.substr(colon + 1);
  auto as_vector = [&](const std::string& s) {
    Matrix m = parse_matrix(s);
    if (m.rows() == 1) m.transposeInPlace();
    if (m.rows() != d || m.cols() != 1)
      throw ConfigError("--init: expected " + std::to_string(d) + " coordinates in '" + s + "'");
    return Vector(m.col(0));
  };
  if (kind == "point") return PointInit{body.empty() ? Vector(Vector::Zero(d)) : as_vector(body)};
  if (kind == "gaussian") {
    const auto bar = body.find('|');
    if (bar == std::string::npos) throw ConfigError("--init gaussian: expected 'mean|covariance'");
    Matrix cov = parse_matrix(body.substr(bar + 1));
    if (cov.rows() != d || cov.cols() != d)
      throw ConfigError("--init gaussian: covariance must be " + std::to_string(d) + "x" + std::to_string(d));
    return GaussianInit{as_vector(body.substr(0, bar)), std::move(cov)};
  }
  if (kind == "csv") {
    if (body.empty()) throw ConfigError("--init csv: missing path");
    return CsvInit{body};
  }
  throw ConfigError("--init: unknown kind '" + kind + "'");
}

namespace detail {

inline bool needs_seed(const RunConfig& c) { return c.command != "solve"; }

inline void validate(const RunConfig& c) {
  if (c.particles < 1) throw ConfigError("--particles must be >= 1");
  if (c.paths < 2) throw ConfigError("--paths must be >= 2");
  if (!(c.dt > 0.0)) throw ConfigError("--dt must be > 0");
  if (!(c.riccati_step > 0.0)) throw ConfigError("--riccati-step must be > 0");
  if (!(c.t0 >= 0.0)) throw ConfigError("--t0 must be >= 0");
  if (!(c.delta > 0.0)) throw ConfigError("--delta must be > 0");
  if (c.draws < 1) throw ConfigError("--draws must be >= 1");
  if (c.pairs < 1) throw ConfigError("--pairs must be >= 1");
  if (c.node_stride < 1 || c.particle_stride < 1) throw ConfigError("strides must be >= 1");
  if (c.control != "optimal" && c.control != "zero") throw ConfigError("--control must be 'optimal' or 'zero'");
  if (needs_seed(c) && !c.has_seed) throw ConfigError("--seed is required for '" + c.command + "'");
  if (c.command == "verify" && c.check.empty()) throw ConfigError("verify: missing check name");
  if (c.command != "systemic-risk" && c.model.empty()) throw ConfigError("--model is required");
}

inline std::ofstream open_output(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.out);
  const auto path = std::filesystem::path(c.out) / name;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

inline void write_json(const RunConfig& c, const std::string& name, const Json& j) {
  auto os = open_output(c, name);
  os << j.dump(2) << '\n';
}

inline SimulationConfig simulation_config(const RunConfig& c, double T) {
  if (!(c.t0 < T)) throw ConfigError("--t0 must be < T");
  SimulationConfig cfg;
  cfg.t0 = c.t0;
  cfg.T = T;
  cfg.dt = c.dt;
  cfg.seed = c.seed;
  try {
    cfg.steps();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

struct Loaded {
  LqProblem problem;
  QuadraticValue qv;
};

inline Loaded load(const RunConfig& c) {
  LqProblem p = read_model(c.model);
  QuadraticValue qv = QuadraticValue::solve(p.dyn, p.cost, p.T, c.riccati_step);
  return {std::move(p), std::move(qv)};
}

inline double epsilon_or(const RunConfig& c, double fallback) { return std::isnan(c.epsilon) ? fallback : c.epsilon; }

/// The selected control, shifted by --epsilon (default 0) in every coordinate.
inline ControlSpec selected_control(const RunConfig& c, const QuadraticValue& qv) {
  const Index d = qv.dynamics().state_dim();
  const Index m = qv.dynamics().control_dim();
  const ControlSpec base = c.control == "zero" ? ControlSpec::zero(d, m) : optimal_control_spec(qv);
  return base.shifted(Vector::Constant(m, epsilon_or(c, 0.0)));
}

inline Json run_json(const RunConfig& c) {
  return Json{{"model", c.model}, {"seed", c.seed},   {"particles", c.particles},
              {"paths", c.paths}, {"dt", c.dt},       {"riccati_step", c.riccati_step},
              {"t0", c.t0},       {"init", c.init},   {"control", c.control},
              {"epsilon", epsilon_or(c, 0.0)}};
}

inline int cmd_solve(const RunConfig& c, std::ostream& out) {
  const Loaded l = load(c);
  {
    auto os = open_output(c, "riccati.csv");
    write_riccati_csv(os, l.qv.solution());
  }
  {
    auto os = open_output(c, "policy.csv");
    write_policy_csv(os, l.qv);
  }
  out << "riccati nodes: " << l.qv.solution().nodes() << '\n';
  out << "Lambda(0) = " << format_matrix(l.qv.solution().eval(0.0).Lam) << '\n';
  return kSuccess;
}

inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
  const Loaded l = load(c);
  const SimulationConfig base = simulation_config(c, l.problem.T);
  const LqParticleModel model(l.problem.dyn, l.problem.cost);
  const ControlSpec control = selected_control(c, l.qv);
  const EmpiricalMeasure mu0 =
      sample_initial(parse_initial_spec(c.init, l.problem.dyn.state_dim()), c.particles, c.seed);
  auto traj_os = open_output(c, "trajectory.csv");
  auto mean_os = open_output(c, "mean.csv");
  for (std::size_t p = 0; p < c.paths; ++p) {
    SimulationConfig cfg = base;
    cfg.path = static_cast<std::uint32_t>(p);
    const std::vector<ParticleTrajectory> one{simulate_path(model, control, mu0, cfg)};
    write_trajectory_csv(traj_os, one, c.node_stride, c.particle_stride, p == 0);
    write_mean_csv(mean_os, one, p == 0);
  }
  out << "simulated " << c.paths << " paths of " << c.particles << " particles\n";
  return kSuccess;
}

inline int cmd_cost(const RunConfig& c, std::ostream& out) {
  const Loaded l = load(c);
  const SimulationConfig base = simulation_config(c, l.problem.T);
  const LqParticleModel model(l.problem.dyn, l.problem.cost);
  const ControlSpec control = selected_control(c, l.qv);
  const EmpiricalMeasure mu0 =
      sample_initial(parse_initial_spec(c.init, l.problem.dyn.state_dim()), c.particles, c.seed);
  const CostEstimate est = estimate_cost(model, control, mu0, c.paths, base, c.threads);
  const double value = l.qv.value(c.t0, mu0);
  Json j = run_json(c);
  j["T"] = l.problem.T;
  j["cost"] = est.mean;
  j["stderr"] = est.std_error;
  j["value"] = value;
  write_json(c, "cost.json", j);
  out << "cost = " << format_double(est.mean) << " (stderr " << format_double(est.std_error)
      << "), value = " << format_double(value) << '\n';
  return kSuccess;
}

inline std::vector<double> dpp_thetas(const RunConfig& c, double T) {
  if (!std::isnan(c.theta)) return {c.theta};
  std::vector<double> out;
  for (double f : {0.25, 0.5, 0.75}) out.push_back(c.t0 + f * (T - c.t0));
  return out;
}

inline int cmd_verify(const RunConfig& c, std::ostream& out) {
  const Loaded l = load(c);
  const QuadraticValue& qv = l.qv;
  const double T = l.problem.T;
  const Index d = l.problem.dyn.state_dim();
  const LqParticleModel model(l.problem.dyn, l.problem.cost);
  const InitialSpec init = parse_initial_spec(c.init, d);
  CheckReport rep;
  if (c.check == "bellman") {
    rep = bellman_report(qv, c.draws, c.particles, c.seed);
  } else if (c.check == "grad") {
    rep = grad_report(qv, c.draws, c.particles, epsilon_or(c, 1e-3), c.seed);
  } else {
    const SimulationConfig base = simulation_config(c, T);
    const EmpiricalMeasure mu0 = sample_initial(init, c.particles, c.seed);
    if (c.check == "dpp") {
      rep = dpp_report(qv, model, mu0, dpp_thetas(c, T), standard_dpp_controls(qv, epsilon_or(c, 0.5)), c.paths,
                       base, c.threads);
    } else if (c.check == "ito") {
      const AffineMap a = c.control == "zero" ? AffineMap::constant(d, Vector::Zero(l.problem.dyn.control_dim()))
                                              : qv.optimal_control(c.t0, mu0);
      const QuadraticFunctional phi{Matrix::Zero(d, d), Matrix::Identity(d, d), Vector::Zero(d), 0.0};
      rep = ito_report(model, a, mu0, phi, c.delta, c.paths, base, c.threads);
    } else if (c.check == "chaos") {
      std::vector<Index> Ns = c.chaos_particles;
      const double reference = reference_value(qv, c.t0, init, Ns.back(), c.seed);
      rep = chaos_report(model, optimal_control_spec(qv), init, Ns, c.paths, base, reference, c.threads);
    } else if (c.check == "flow") {
      rep = flow_report(model, selected_control(c, qv), mu0, base, c.pairs);
    } else {
      throw ConfigError("verify: unknown check '" + c.check + "'");
    }
  }
  Json j = to_json(rep);
  j["run"] = run_json(c);
  write_json(c, "verify_" + c.check + ".json", j);
  out << rep.check << ": " << (rep.pass ? "PASS" : "FAIL") << " statistic=" << format_double(rep.statistic)
      << " tolerance=" << format_double(rep.tolerance) << '\n';
  return rep.pass ? kSuccess : kVerificationFailed;
}

/**
 * Interbank model end to end: closed-form vs numeric Lam, optimal simulation,
 * cost against the value (3 stderr + |c(2dt) - c(dt)|).
 */
inline int cmd_systemic_risk(const RunConfig& c, std::ostream& out) {
  constexpr double kLambdaTol = 1e-8;
  const SystemicRiskParams& p = c.risk;
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, c.riccati_step);
  const auto [dplus, dminus] = systemic_risk_deltas(p);
  const RiccatiSolution& sol = qv.solution();

  double max_err = 0.0;
  {
    auto os = open_output(c, "lambda.csv");
    os << "t,lambda,lambda_closed_form,abs_error\n";
    for (std::size_t k = 0; k < sol.nodes(); ++k) {
      const double t = sol.grid[k];
      const double num = sol.Lam[k](0, 0);
      const double exact = closed_form_lambda(p, t);
      max_err = std::max(max_err, std::abs(num - exact));
      os << format_double(t) << ',' << format_double(num) << ',' << format_double(exact) << ','
         << format_double(std::abs(num - exact)) << '\n';
    }
  }
  {
    auto os = open_output(c, "riccati.csv");
    write_riccati_csv(os, sol);
  }
  {
    auto os = open_output(c, "policy.csv");
    write_policy_csv(os, qv);
  }

  const SimulationConfig base = simulation_config(c, p.T);
  const LqParticleModel model(dyn, cost);
  const ControlSpec opt = optimal_control_spec(qv);
  const EmpiricalMeasure mu0 = EmpiricalMeasure::point_mass(Vector::Constant(1, p.x0), c.particles);
  std::vector<double> costs(c.paths);
  std::vector<std::vector<double>> means(c.paths);
  std::vector<std::vector<double>> commons(c.paths);
  for_each_path(c.paths, c.threads, [&](std::size_t path) {
    SimulationConfig cfg = base;
    cfg.path = static_cast<std::uint32_t>(path);
    CostAccumulator<LqParticleModel> acc(model, cfg.dt);
    run_particles(model, opt, mu0.points(), cfg, 0, [&](const StepView& v) {
      acc(v);
      means[path].push_back(v.mean(0));
      if (v.common_increment) commons[path].push_back((*v.common_increment)(0));
    });
    costs[path] = acc.total();
  });
  const SampleSummary fine = summarize(costs);
  const SampleSummary coarse = summarize(path_costs(model, opt, mu0, c.paths, coarsened(base), c.threads));
  const double value = qv.value(c.t0, mu0);
  const double dt_bias = richardson_bias(coarse.mean, fine.mean);
  const double tolerance = 3.0 * fine.std_error + dt_bias;
  const bool cost_ok = std::abs(fine.mean - value) <= tolerance;
  const bool lambda_ok = max_err <= kLambdaTol;
  {
    auto os = open_output(c, "mean.csv");
    os << "path,t,mean_0,W0_cum\n";
    const std::size_t K = base.steps();
    for (std::size_t path = 0; path < c.paths; ++path) {
      double w = 0.0;
      for (std::size_t k = 0; k <= K; ++k) {
        os << path << ',' << format_double(base.time(k, K)) << ',' << format_double(means[path][k]) << ','
           << format_double(w) << '\n';
        if (k < K) w += commons[path][k];
      }
    }
  }
  Json j{{"params",
          {{"kappa", p.kappa},
           {"q", p.q},
           {"eta", p.eta},
           {"c", p.c},
           {"sigma0", p.sigma0},
           {"sigma1", p.sigma1},
           {"rho", p.rho},
           {"T", p.T},
           {"x0", p.x0}}},
         {"run", run_json(c)},
         {"delta_plus", dplus},
         {"delta_minus", dminus},
         {"lambda0", sol.Lam.front()(0, 0)},
         {"lambda0_closed_form", closed_form_lambda(p, 0.0)},
         {"lambda_max_abs_error", max_err},
         {"lambda_tolerance", kLambdaTol},
         {"cost", fine.mean},
         {"stderr", fine.std_error},
         {"cost_2dt", coarse.mean},
         {"value", value},
         {"tolerance", tolerance},
         {"pass", cost_ok && lambda_ok}};
  write_json(c, "systemic_risk.json", j);
  out << "delta+ = " << format_double(dplus) << '\n';
  out << "delta- = " << format_double(dminus) << '\n';
  out << "Lambda(0) = " << format_double(sol.Lam.front()(0, 0)) << " (closed form "
      << format_double(closed_form_lambda(p, 0.0)) << ", max abs error " << format_double(max_err) << ")\n";
  out << "cost = " << format_double(fine.mean) << " +- " << format_double(fine.std_error)
      << ", value = " << format_double(value) << (cost_ok ? " PASS" : " FAIL") << '\n';
  return cost_ok && lambda_ok ? kSuccess : kVerificationFailed;
}

}  // namespace detail

inline int dispatch(const RunConfig& c, std::ostream& out) {
  detail::validate(c);
  if (c.command == "solve") return detail::cmd_solve(c, out);
  if (c.command == "simulate") return detail::cmd_simulate(c, out);
  if (c.command == "cost") return detail::cmd_cost(c, out);
  if (c.command == "verify") return detail::cmd_verify(c, out);
  if (c.command == "systemic-risk") return detail::cmd_systemic_risk(c, out);
  throw ConfigError("unknown command '" + c.command + "'");
}

/// Parses argv (program name first) and runs the command; never throws.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Solver and verification lab for LQ conditional McKean-Vlasov control", "mvlq"};
  app.set_config("--config", "", "Config file (TOML or INI); keys mirror the long flags, flags win");
  app.add_option("command", c.command, "solve | simulate | cost | verify | systemic-risk")
      ->required()
      ->check(CLI::IsMember({"solve", "simulate", "cost", "verify", "systemic-risk"}));
  app.add_option("check", c.check, "verify: bellman | dpp | ito | grad | chaos | flow")
      ->check(CLI::IsMember({"bellman", "dpp", "ito", "grad", "chaos", "flow"}));
  app.add_option("--model", c.model, "LQ model file (key = value)");
  app.add_option("--out", c.out, "Output directory")->capture_default_str();
  auto* seed = app.add_option("--seed", c.seed, "64-bit seed (required whenever randomness is used)");
  app.add_option("--particles", c.particles, "Particles N")->capture_default_str();
  app.add_option("--paths", c.paths, "Common-noise paths M")->capture_default_str();
  app.add_option("--dt", c.dt, "Euler step")->capture_default_str();
  app.add_option("--riccati-step", c.riccati_step, "RK4 step h")->capture_default_str();
  app.add_option("--t0", c.t0, "Start time")->capture_default_str();
  app.add_option("--theta", c.theta, "Intermediate time for dpp (default T/4, T/2, 3T/4)");
  app.add_option("--epsilon", c.epsilon, "Control shift; dpp shift size; grad finite-difference step");
  app.add_option("--delta", c.delta, "Ito check horizon")->capture_default_str();
  app.add_option("--draws", c.draws, "Random draws for bellman and grad")->capture_default_str();
  app.add_option("--pairs", c.pairs, "Restart pairs for flow")->capture_default_str();
  app.add_option("--init", c.init, "point[:x] | gaussian:m|C | csv:path")->capture_default_str();
  app.add_option("--control", c.control, "optimal | zero")->capture_default_str();
  app.add_option("--chaos-particles", c.chaos_particles, "Ascending particle counts for chaos")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--node-stride", c.node_stride, "Trajectory CSV node stride")->capture_default_str();
  app.add_option("--particle-stride", c.particle_stride, "Trajectory CSV particle stride")->capture_default_str();
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--kappa", c.risk.kappa)->capture_default_str();
  app.add_option("--q", c.risk.q)->capture_default_str();
  app.add_option("--eta", c.risk.eta)->capture_default_str();
  app.add_option("--c", c.risk.c)->capture_default_str();
  app.add_option("--sigma0", c.risk.sigma0)->capture_default_str();
  app.add_option("--sigma1", c.risk.sigma1)->capture_default_str();
  app.add_option("--rho", c.risk.rho)->capture_default_str();
  app.add_option("--T", c.risk.T, "Horizon (systemic-risk)")->capture_default_str();
  app.add_option("--x0", c.risk.x0)->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  c.has_seed = seed->count() > 0;
  try {
    return dispatch(c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DimensionMismatch& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NonPositiveGain& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const NumericalBlowup& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
}

}  // namespace mvlq::cli
