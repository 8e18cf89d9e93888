/**
 * @file checks.hpp
 * @brief Pass/fail certificates built on verify.hpp, with tolerances and a
 *        JSON report per check.
 *
 * Statistical bounds are 3 standard errors. Discretization bounds are
 * first-order Richardson estimates from a rerun on the grid of step 2 dt
 * (same Brownian paths), i.e. C dt ~ |s(2dt) - s(dt)|.
 */

#pragma once

#include "mvlq/io.hpp"
#include "mvlq/verify.hpp"

#include <json.hpp>

#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace mvlq {

using Json = nlohmann::ordered_json;

struct CheckReport {
  std::string check;
  bool pass = false;
  double statistic = 0.0;
  double tolerance = 0.0;
  double std_error = 0.0;
  Json config = Json::object();
  Json details = Json::object();
};

inline Json to_json(const CheckReport& r) {
  return Json{{"check", r.check},         {"pass", r.pass},     {"statistic", r.statistic},
              {"tolerance", r.tolerance}, {"stderr", r.std_error}, {"config", r.config},
              {"details", r.details}};
}

inline Json to_json(const SimulationConfig& c) {
  return Json{{"t0", c.t0}, {"T", c.T}, {"dt", c.dt}, {"seed", c.seed}, {"noise_substeps", c.noise_substeps},
              {"center_idiosyncratic", c.center_idiosyncratic}};
}

// ---------------------------------------------------------------------------
// Random inputs

inline Matrix aux_matrix(AuxStream& aux, Index rows, Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = scale * aux.normal();
  return m;
}

/// Gaussian cloud around a random center.
inline EmpiricalMeasure aux_cloud(AuxStream& aux, Index d, Index N, double spread = 1.0) {
  const Vector center = aux_matrix(aux, d, 1);
  Matrix pts = aux_matrix(aux, d, N, spread);
  pts.colwise() += center;
  return EmpiricalMeasure(std::move(pts));
}

/// Random LQ data with P2, P2 + P2bar, Q2, Q2 + Q2bar PSD and R2 >= I / 2.
inline LqProblem random_standing_problem(AuxStream& aux, Index d, Index m) {
  auto psd = [&](Index n, double s) {
    const Matrix a = aux_matrix(aux, n, n, s);
    return Matrix(a * a.transpose());
  };
  LqDynamics dyn;
  dyn.b0 = aux_matrix(aux, d, 1, 0.5);
  dyn.B = aux_matrix(aux, d, d, 0.5);
  dyn.Bbar = aux_matrix(aux, d, d, 0.5);
  dyn.C = aux_matrix(aux, d, m, 0.5);
  dyn.theta = aux_matrix(aux, d, 1, 0.5);
  dyn.D = aux_matrix(aux, d, d, 0.3);
  dyn.Dbar = aux_matrix(aux, d, d, 0.3);
  dyn.F = aux_matrix(aux, d, m, 0.3);
  dyn.theta0 = aux_matrix(aux, d, 1, 0.5);
  dyn.D0 = aux_matrix(aux, d, d, 0.3);
  dyn.D0bar = aux_matrix(aux, d, d, 0.3);
  dyn.F0 = aux_matrix(aux, d, m, 0.3);
  const Matrix Q2 = psd(d, 0.5);
  const Matrix P2 = psd(d, 0.5);
  LqCost cost(Q2, psd(d, 0.5), 0.5 * Matrix::Identity(m, m) + psd(m, 0.4), P2, psd(d, 0.5),
              aux_matrix(aux, d, m, 0.1));
  return {std::move(dyn), std::move(cost), 1.0};
}

// ---------------------------------------------------------------------------
// Deterministic checks

/**
 * Bellman residual on `draws` random (t, cloud) pairs: relative residual at
 * a* (tolerance 1e-8) and agreement of the residual at a random affine a with
 * the completion gap (tolerance 1e-10).
 */
inline CheckReport bellman_report(const QuadraticValue& qv, std::size_t draws, Index N, std::uint64_t seed) {
  constexpr double kTolOptimal = 1e-8;
  constexpr double kTolGap = 1e-10;
  AuxStream aux(seed, 0);
  const Index d = qv.dynamics().state_dim();
  const Index m = qv.dynamics().control_dim();
  double worst_opt = 0.0, worst_gap = 0.0, min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < draws; ++i) {
    const double t = aux.uniform() * qv.horizon();
    const EmpiricalMeasure mu = aux_cloud(aux, d, N, 1.5);
    const AffineMap astar = qv.optimal_control(t, mu);
    const BellmanResidual r0 = bellman_residual(qv, t, mu, astar);
    const double s0 = r0.scale();
    worst_opt = std::max(worst_opt, s0 > 0.0 ? std::abs(r0.residual) / s0 : std::abs(r0.residual));

    const AffineMap a{astar.K + aux_matrix(aux, m, d, 0.5), astar.k + aux_matrix(aux, m, 1, 0.5)};
    const BellmanResidual r = bellman_residual(qv, t, mu, a);
    const double gap = completion_gap(qv, t, mu, a);
    const double scale = std::max(r.scale(), std::abs(gap));
    worst_gap = std::max(worst_gap, scale > 0.0 ? std::abs(r.residual - gap) / scale : std::abs(r.residual - gap));
    min_gap = std::min(min_gap, gap);
  }
  CheckReport rep;
  rep.check = "bellman";
  rep.statistic = worst_opt;
  rep.tolerance = kTolOptimal;
  rep.pass = worst_opt <= kTolOptimal && worst_gap <= kTolGap;
  rep.config = Json{{"draws", draws}, {"particles", N}, {"seed", seed}};
  rep.details = Json{{"max_relative_residual_at_optimum", worst_opt},
                     {"max_relative_gap_mismatch", worst_gap},
                     {"gap_tolerance", kTolGap},
                     {"min_completion_gap", min_gap}};
  return rep;
}

/// Lifted-gradient check on `draws` random (t, cloud) pairs; tolerance 1e-6.
inline CheckReport grad_report(const QuadraticValue& qv, std::size_t draws, Index N, double epsilon,
                               std::uint64_t seed) {
  constexpr double kTol = 1e-6;
  AuxStream aux(seed, 1);
  const Index d = qv.dynamics().state_dim();
  double worst = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double t = aux.uniform() * qv.horizon();
    const EmpiricalMeasure mu = aux_cloud(aux, d, N, 1.5);
    worst = std::max(worst, grad_check(qv, t, mu, epsilon));
  }
  CheckReport rep;
  rep.check = "grad";
  rep.statistic = worst;
  rep.tolerance = kTol;
  rep.pass = worst <= kTol;
  rep.config = Json{{"draws", draws}, {"particles", N}, {"epsilon", epsilon}, {"seed", seed}};
  return rep;
}

/// Number of entries (times and states) where a restarted suffix differs from the original run.
template <ParticleDynamics Dyn>
std::size_t flow_mismatches(const Dyn& dyn, const ControlSpec& control, const EmpiricalMeasure& mu0,
                            const SimulationConfig& cfg, std::size_t node) {
  const ParticleTrajectory traj = simulate_path(dyn, control, mu0, cfg);
  const ParticleTrajectory cont = restart_continuation(traj, dyn, control, node);
  std::size_t bad = cont.nodes() == traj.nodes() - node ? 0 : 1;
  for (std::size_t k = 0; k < std::min(cont.nodes(), traj.nodes() - node); ++k) {
    if (cont.times[k] != traj.times[node + k]) ++bad;
    bad += static_cast<std::size_t>((cont.states[k].array() != traj.states[node + k].array()).count());
  }
  return bad;
}

/// Flow property on `pairs` (path, theta) draws; zero tolerance.
template <ParticleDynamics Dyn>
CheckReport flow_report(const Dyn& dyn, const ControlSpec& control, const EmpiricalMeasure& mu0,
                        const SimulationConfig& base, std::size_t pairs) {
  AuxStream aux(base.seed, 2);
  const std::size_t K = base.steps();
  if (K < 2) throw DomainError("flow check: need at least two steps");
  std::size_t bad = 0;
  Json cases = Json::array();
  for (std::size_t i = 0; i < pairs; ++i) {
    SimulationConfig cfg = base;
    cfg.path = static_cast<std::uint32_t>(i);
    const auto node = static_cast<std::size_t>(aux.integer(1, static_cast<int>(K) - 1));
    const std::size_t b = flow_mismatches(dyn, control, mu0, cfg, node);
    bad += b;
    cases.push_back(Json{{"path", i}, {"theta", cfg.time(node, K)}, {"mismatches", b}});
  }
  CheckReport rep;
  rep.check = "flow";
  rep.statistic = static_cast<double>(bad);
  rep.tolerance = 0.0;
  rep.pass = bad == 0;
  rep.config = to_json(base);
  rep.config["pairs"] = pairs;
  rep.config["particles"] = mu0.size();
  rep.details = Json{{"cases", cases}};
  return rep;
}

// ---------------------------------------------------------------------------
// Monte Carlo checks

struct NamedControl {
  std::string name;
  ControlSpec control;
  bool optimal = false;
};

/// Optimal feedback, zero control, optimal +- eps (all coordinates) and the optimal gains halved.
inline std::vector<NamedControl> standard_dpp_controls(const QuadraticValue& qv, double epsilon) {
  const Index d = qv.dynamics().state_dim();
  const Index m = qv.dynamics().control_dim();
  const ControlSpec opt = optimal_control_spec(qv);
  const Vector eps = Vector::Constant(m, epsilon);
  const ControlSpec half = ControlSpec::feedback(m, [qv](double t) {
    const FeedbackGains fb = qv.optimal_feedback(t);
    return ControlSpec::Gains{0.5 * fb.K1, 0.5 * fb.K2, 0.5 * fb.k};
  });
  return {{"optimal", opt, true},
          {"zero", ControlSpec::zero(d, m), false},
          {"optimal_plus_eps", opt.shifted(eps), false},
          {"optimal_minus_eps", opt.shifted(-eps), false},
          {"half_gain", half, false}};
}

/**
 * DPP gaps for each control and theta. Each gap gets the tolerance
 * 3 stderr + |gap(2dt) - gap(dt)|. The optimal control must satisfy
 * |gap| <= tol, every other control gap >= -tol. The statistic is the worst
 * violation ratio (pass iff <= 1).
 */
template <ParticleDynamics Dyn>
CheckReport dpp_report(const QuadraticValue& qv, const Dyn& dyn, const EmpiricalMeasure& mu,
                       const std::vector<double>& thetas, const std::vector<NamedControl>& controls, std::size_t M,
                       const SimulationConfig& base, unsigned threads = 0) {
  CheckReport rep;
  rep.check = "dpp";
  rep.tolerance = 1.0;
  double worst = 0.0, worst_se = 0.0;
  Json rows = Json::array();
  for (const NamedControl& c : controls) {
    const auto fine = dpp_check(qv, dyn, mu, thetas, c.control, M, base, threads);
    const auto coarse = dpp_check(qv, dyn, mu, thetas, c.control, M, coarsened(base), threads);
    for (std::size_t j = 0; j < fine.size(); ++j) {
      const double bias = richardson_bias(coarse[j].gap, fine[j].gap);
      const double tol = 3.0 * fine[j].std_error + bias;
      double ratio = 0.0;
      if (tol > 0.0) ratio = c.optimal ? std::abs(fine[j].gap) / tol : -fine[j].gap / tol;
      else if (fine[j].gap != 0.0) ratio = std::numeric_limits<double>::infinity();
      worst = std::max(worst, ratio);
      worst_se = std::max(worst_se, fine[j].std_error);
      rows.push_back(Json{{"control", c.name},
                          {"optimal", c.optimal},
                          {"theta", fine[j].theta},
                          {"gap", fine[j].gap},
                          {"stderr", fine[j].std_error},
                          {"dt_bias", bias},
                          {"tolerance", tol}});
    }
  }
  rep.statistic = worst;
  rep.std_error = worst_se;
  rep.pass = worst <= 1.0;
  rep.config = to_json(base);
  rep.config["paths"] = M;
  rep.config["particles"] = mu.size();
  rep.details = Json{{"gaps", rows}};
  return rep;
}

/**
 * Ito formula along the flow: |lhs - rhs| <= 3 stderr + C (delta + dt), with
 * the delta part from rerunning at 2 delta and the dt part from rerunning at 2 dt.
 */
template <ParticleDynamics Dyn>
CheckReport ito_report(const Dyn& dyn, const AffineMap& a, const EmpiricalMeasure& mu, const QuadraticFunctional& phi,
                       double delta, std::size_t M, const SimulationConfig& base, unsigned threads = 0) {
  const ItoCheck fine = ito_generator_check(dyn, a, mu, phi, delta, M, base, threads);
  const ItoCheck wide = ito_generator_check(dyn, a, mu, phi, 2.0 * delta, M, base, threads);
  const ItoCheck coarse = ito_generator_check(dyn, a, mu, phi, delta, M, coarsened(base), threads);
  const double delta_bias = richardson_bias(wide.lhs, fine.lhs);
  const double dt_bias = richardson_bias(coarse.lhs, fine.lhs);
  CheckReport rep;
  rep.check = "ito";
  rep.statistic = std::abs(fine.lhs - fine.rhs);
  rep.std_error = fine.lhs_std_error;
  rep.tolerance = 3.0 * fine.lhs_std_error + delta_bias + dt_bias;
  rep.pass = rep.statistic <= rep.tolerance;
  rep.config = to_json(base);
  rep.config["delta"] = delta;
  rep.config["paths"] = M;
  rep.config["particles"] = mu.size();
  rep.details = Json{{"lhs", fine.lhs},
                     {"rhs", fine.rhs},
                     {"first_order", fine.generator.first_order},
                     {"second_order", fine.generator.second_order},
                     {"delta_bias", delta_bias},
                     {"dt_bias", dt_bias}};
  return rep;
}

/// Integral over [t0, T] of eps' V_t eps, trapezoid rule on the Riccati grid.
inline double shift_excess_oracle(const QuadraticValue& qv, double t0, const Vector& eps) {
  const RiccatiSolution& sol = qv.solution();
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < sol.nodes(); ++k) {
    const double a = std::max(sol.grid[k], t0);
    const double b = sol.grid[k + 1];
    if (b <= a) continue;
    const double fa = eps.dot(qv.gains_at(a).V * eps);
    const double fb = eps.dot(qv.gains_at(b).V * eps);
    total += 0.5 * (fa + fb) * (b - a);
  }
  return total;
}

/**
 * Optimality gap of the verification theorem: |J(a*) - w(t0, mu0)| <= 3 stderr
 * + C dt, with C the largest Richardson slope over dt, 2dt, 4dt. Constant
 * shifts eps (all control coordinates) must cost int eps'V eps dt extra,
 * within 20%.
 */
template <ParticleDynamics Dyn>
CheckReport optimality_report(const QuadraticValue& qv, const Dyn& dyn, const EmpiricalMeasure& mu0, std::size_t M,
                              const SimulationConfig& base, const std::vector<double>& epsilons,
                              unsigned threads = 0) {
  constexpr double kShiftTol = 0.2;
  const ControlSpec opt = optimal_control_spec(qv);
  const SimulationConfig c2 = coarsened(base);
  const SimulationConfig c4 = coarsened(c2);
  const CostEstimate e1 = estimate_cost(dyn, opt, mu0, M, base, threads);
  const CostEstimate e2 = estimate_cost(dyn, opt, mu0, M, c2, threads);
  const CostEstimate e4 = estimate_cost(dyn, opt, mu0, M, c4, threads);
  const double slope = std::max(std::abs(e2.mean - e1.mean) / base.dt, std::abs(e4.mean - e2.mean) / c2.dt);
  const double value = qv.value(base.t0, mu0);

  CheckReport rep;
  rep.check = "optimality";
  rep.statistic = std::abs(e1.mean - value);
  rep.std_error = e1.std_error;
  rep.tolerance = 3.0 * e1.std_error + slope * base.dt;
  bool shifts_ok = true;
  Json shifts = Json::array();
  for (double eps : epsilons) {
    const Vector shift = Vector::Constant(qv.dynamics().control_dim(), eps);
    const CostEstimate es = estimate_cost(dyn, opt.shifted(shift), mu0, M, base, threads);
    const double excess = es.mean - e1.mean;
    const double oracle = shift_excess_oracle(qv, base.t0, shift);
    const double rel = std::abs(excess - oracle) / oracle;
    shifts_ok = shifts_ok && rel <= kShiftTol;
    shifts.push_back(Json{{"epsilon", eps},
                          {"cost", es.mean},
                          {"stderr", es.std_error},
                          {"excess", excess},
                          {"expected_excess", oracle},
                          {"relative_error", rel}});
  }
  rep.pass = rep.statistic <= rep.tolerance && shifts_ok;
  rep.config = to_json(base);
  rep.config["paths"] = M;
  rep.config["particles"] = mu0.size();
  rep.details = Json{{"cost", e1.mean},
                     {"value", value},
                     {"cost_2dt", e2.mean},
                     {"cost_4dt", e4.mean},
                     {"richardson_slope", slope},
                     {"shift_tolerance", kShiftTol},
                     {"shifts", shifts}};
  return rep;
}

/// w(t, law) for the initial law itself: exact for point and Gaussian laws, the sampled cloud for CSV input.
inline double reference_value(const QuadraticValue& qv, double t, const InitialSpec& init, Index N,
                              std::uint64_t seed) {
  const QuadraticFunctional w = qv.functional_at(t);
  if (const auto* p = std::get_if<PointInit>(&init)) return w(EmpiricalMeasure::point_mass(p->x));
  if (const auto* g = std::get_if<GaussianInit>(&init))
    return (w.L * symmetrized(g->cov)).trace() + g->mean.dot(w.G * g->mean) + w.g.dot(g->mean) + w.c;
  return w(sample_initial(init, N, seed));
}

/**
 * Propagation of chaos: Richardson-extrapolated cost estimates at increasing N
 * against `reference`; pass iff chaos_trend_ok. The statistic is the deviation
 * at the largest N.
 */
template <ParticleDynamics Dyn>
CheckReport chaos_report(const Dyn& dyn, const ControlSpec& control, const InitialSpec& init,
                         const std::vector<Index>& Ns, std::size_t M, const SimulationConfig& base, double reference,
                         unsigned threads = 0, bool richardson = true) {
  const auto rows = chaos_convergence(dyn, control, init, Ns, M, base, threads, richardson);
  CheckReport rep;
  rep.check = "chaos";
  rep.statistic = std::abs(rows.back().mean - reference);
  rep.std_error = rows.back().std_error;
  rep.tolerance = std::abs(rows.front().mean - reference);
  rep.pass = chaos_trend_ok(rows, reference);
  Json table = Json::array();
  for (const ChaosRow& r : rows)
    table.push_back(Json{{"N", r.N}, {"mean", r.mean}, {"stderr", r.std_error}, {"deviation", r.mean - reference}});
  rep.config = to_json(base);
  rep.config["paths"] = M;
  rep.details = Json{{"reference", reference}, {"richardson", richardson}, {"rows", table}};
  return rep;
}

}  // namespace mvlq
