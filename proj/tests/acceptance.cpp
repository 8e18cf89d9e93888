// Acceptance run: one PASS/FAIL line per property, JSON details in
// acceptance_report.json. Exit status 1 if any property fails.

#include "mvlq/checks.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>

using namespace mvlq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string summary;
  Json details = Json::object();
};

// kappa = 1, q = 0.5, eta = 1, c = 1, sigma0 = 1, rho = 0.5, T = 1, x0 = 0.
SystemicRiskParams interbank(double sigma1) {
  SystemicRiskParams p;
  p.kappa = 1.0;
  p.q = 0.5;
  p.eta = 1.0;
  p.c = 1.0;
  p.sigma0 = 1.0;
  p.sigma1 = sigma1;
  p.rho = 0.5;
  p.T = 1.0;
  p.x0 = 0.0;
  return p;
}

SimulationConfig grid(double T, double dt, std::uint64_t seed) {
  SimulationConfig c;
  c.T = T;
  c.dt = dt;
  c.seed = seed;
  return c;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_lambda_error(const SystemicRiskParams& p, double h) {
  const auto [dyn, cost] = systemic_risk_model(p);
  const RiccatiSolution sol = solve_riccati(dyn, cost, p.T, h);
  double err = 0.0;
  for (std::size_t k = 0; k < sol.nodes(); ++k)
    err = std::max(err, std::abs(sol.Lam[k](0, 0) - closed_form_lambda(p, sol.grid[k])));
  return err;
}

Outcome riccati_closed_form() {
  const SystemicRiskParams p = interbank(0.3);
  const auto start = Clock::now();
  const double err = max_lambda_error(p, 1e-3);
  const double runtime = seconds_since(start);
  // Order from coarse steps, where the error is well above rounding.
  const double e1 = max_lambda_error(p, 0.1);
  const double e2 = max_lambda_error(p, 0.05);
  const double ratio = e1 / e2;
  Outcome o;
  o.pass = err <= 1e-8 && runtime < 1.0 && ratio >= 8.0 && ratio <= 32.0;
  o.summary = fmt("max |Lam - closed form| = %.3e, runtime %.3f s, error ratio h=0.1/0.05 = %.2f", err, runtime,
                  ratio);
  o.details = Json{{"max_abs_error_h_1e-3", err}, {"runtime_s", runtime}, {"error_h_0.1", e1},
                   {"error_h_0.05", e2}, {"ratio", ratio}};
  return o;
}

Outcome sigma1_degeneration() {
  const SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  const RiccatiSolution& sol = qv.solution();
  double gam_max = 0.0;
  for (std::size_t k = 0; k < sol.nodes(); ++k)
    gam_max = std::max({gam_max, sol.Gam[k].cwiseAbs().maxCoeff(), sol.gam[k].cwiseAbs().maxCoeff()});

  const double dt = 1e-3;
  const LqParticleModel model(dyn, cost);
  const EmpiricalMeasure mu0 = EmpiricalMeasure::point_mass(Vector::Constant(1, p.x0), 200);
  double control_err = 0.0;
  for (std::uint32_t path = 0; path < 5; ++path) {
    SimulationConfig cfg = grid(p.T, dt, 41);
    cfg.path = path;
    const ParticleTrajectory traj = simulate_path(model, optimal_control_spec(qv), mu0, cfg);
    for (std::size_t k = 0; k + 1 < traj.nodes(); ++k) {
      const double t = traj.times[k];
      const FeedbackGains fb = qv.optimal_feedback(t);
      const double mubar = traj.mean(k)(0);
      const double w0 = traj.cumulative_common(k)(0);
      const double lam = closed_form_lambda(p, t);
      for (Index i = 0; i < traj.states[k].cols(); ++i) {
        const double x = traj.states[k](0, i);
        const double expected = -(2.0 * lam + p.q) * (x - p.x0 - p.sigma0 * p.rho * w0);
        control_err = std::max(control_err, std::abs(recover_original(fb, p, x, mubar) - expected));
      }
    }
  }
  const double tol = 1e-10 + dt;
  Outcome o;
  o.pass = gam_max <= 1e-14 && control_err <= tol;
  o.summary = fmt("max |Gam|,|gam| = %.1e; max control error %.3e (tolerance %.3e)", gam_max, control_err, tol);
  o.details = Json{{"gam_max", gam_max}, {"control_error", control_err}, {"tolerance", tol}};
  return o;
}

Outcome bellman_identity() {
  const auto start = Clock::now();
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  Json reports = Json::array();
  for (Index d = 1; d <= 3; ++d) {
    AuxStream aux(1000 + static_cast<std::uint64_t>(d), 0);
    const LqProblem prob = random_standing_problem(aux, d, d == 3 ? 2 : 1);
    const bool standing = check_standing_condition(prob.cost, 0.5).pass();
    const QuadraticValue qv = QuadraticValue::solve(prob.dyn, prob.cost, prob.T, 1e-3);
    const CheckReport r = bellman_report(qv, 100, 50, 7 + static_cast<std::uint64_t>(d));
    o.pass = o.pass && standing && r.pass;
    worst = std::max(worst, r.statistic);
    Json j = to_json(r);
    j["d"] = d;
    j["standing_condition"] = standing;
    reports.push_back(j);
  }
  const double runtime = seconds_since(start);
  o.pass = o.pass && runtime < 10.0;
  o.summary = fmt("max relative residual at a* = %.3e over d = 1..3, runtime %.2f s", worst, runtime);
  o.details = Json{{"reports", reports}, {"runtime_s", runtime}};
  return o;
}

Outcome optimality_gap() {
  const SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  const LqParticleModel model(dyn, cost);
  const EmpiricalMeasure mu0 = EmpiricalMeasure::point_mass(Vector::Constant(1, p.x0), 2000);
  const std::vector<double> eps{0.2, 0.5};
  // With R2 = 1/2 and no control in the volatility, the shift excess is eps^2 T / 2.
  double oracle_err = 0.0;
  for (double e : eps)
    oracle_err = std::max(oracle_err, std::abs(shift_excess_oracle(qv, 0.0, Vector::Constant(1, e)) - 0.5 * e * e));
  const CheckReport r = optimality_report(qv, model, mu0, 200, grid(p.T, 1e-3, 2024), eps);
  Outcome o;
  o.pass = r.pass && oracle_err <= 1e-12;
  o.summary = fmt("|J(a*) - w| = %.3e, tolerance %.3e", r.statistic, r.tolerance);
  for (const auto& s : r.details["shifts"])
    o.summary += fmt("; eps=%.1f excess rel. error %.2e", s["epsilon"].get<double>(), s["relative_error"].get<double>());
  o.details = to_json(r);
  return o;
}

Outcome dpp_inequality() {
  const SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  const LqParticleModel model(dyn, cost);
  const EmpiricalMeasure mu0 = EmpiricalMeasure::point_mass(Vector::Constant(1, p.x0), 1000);
  const CheckReport r = dpp_report(qv, model, mu0, {0.25, 0.5, 0.75}, standard_dpp_controls(qv, 0.5), 200,
                                   grid(p.T, 1e-3, 77));
  Outcome o;
  o.pass = r.pass;
  o.summary = fmt("worst violation ratio %.3f over 5 controls x 3 thetas (pass <= 1)", r.statistic);
  o.details = to_json(r);
  return o;
}

Outcome flow_property() {
  AuxStream aux(606, 0);
  std::size_t bad = 0;
  Json cases = Json::array();
  for (std::uint32_t i = 0; i < 10; ++i) {
    const Index d = 1 + aux.integer(0, 2);
    const LqProblem prob = random_standing_problem(aux, d, 1 + aux.integer(0, 1));
    const QuadraticValue qv = QuadraticValue::solve(prob.dyn, prob.cost, prob.T, 1e-2);
    const LqParticleModel model(prob.dyn, prob.cost);
    const EmpiricalMeasure mu0 = aux_cloud(aux, d, 40);
    SimulationConfig cfg = grid(prob.T, 0.01, 5150);
    cfg.path = i;
    const auto node = static_cast<std::size_t>(aux.integer(1, 99));
    const std::size_t b = flow_mismatches(model, optimal_control_spec(qv), mu0, cfg, node);
    bad += b;
    cases.push_back(Json{{"d", d}, {"theta", cfg.time(node, 100)}, {"mismatches", b}});
  }
  Outcome o;
  o.pass = bad == 0;
  o.summary = fmt("%zu mismatching entries over 10 random (model, theta) pairs", bad);
  o.details = Json{{"cases", cases}};
  return o;
}

Outcome ito_generator() {
  const SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const LqParticleModel model(dyn, cost);
  const EmpiricalMeasure mu0 = EmpiricalMeasure::point_mass(Vector::Constant(1, p.x0), 1000);
  const QuadraticFunctional phi{Matrix::Zero(1, 1), Matrix::Identity(1, 1), Vector::Zero(1), 0.0};
  const AffineMap zero = AffineMap::constant(1, Vector::Zero(1));
  const CheckReport r = ito_report(model, zero, mu0, phi, 0.01, 400, grid(p.T, 1e-3, 4242));
  const double rhs = r.details["rhs"].get<double>();
  const double exact = p.sigma0 * p.rho * p.sigma0 * p.rho;
  Outcome o;
  o.pass = r.pass && std::abs(rhs - exact) <= 1e-12;
  o.summary = fmt("generator side %.15f (exact %.2f); |lhs - rhs| = %.3e, tolerance %.3e", rhs, exact, r.statistic,
                  r.tolerance);
  o.details = to_json(r);
  return o;
}

Outcome lifted_gradient() {
  AuxStream aux(88, 0);
  const LqProblem prob = random_standing_problem(aux, 3, 2);
  const QuadraticValue qv = QuadraticValue::solve(prob.dyn, prob.cost, prob.T, 1e-3);
  const CheckReport r = grad_report(qv, 100, 30, 1e-3, 99);
  Outcome o;
  o.pass = r.pass;
  o.summary = fmt("max relative error %.3e over 100 draws (tolerance %.0e)", r.statistic, r.tolerance);
  o.details = to_json(r);
  return o;
}

Outcome propagation_of_chaos() {
  const SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  const LqParticleModel model(dyn, cost);
  const InitialSpec init = PointInit{Vector::Constant(1, p.x0)};
  const double reference = reference_value(qv, 0.0, init, 1, 0);
  const CheckReport r =
      chaos_report(model, optimal_control_spec(qv), init, {250, 1000, 4000}, 200, grid(p.T, 1e-3, 2024), reference);
  Outcome o;
  o.pass = r.pass;
  o.summary = "deviations";
  for (const auto& row : r.details["rows"])
    o.summary += fmt(" N=%ld: %+.3e", row["N"].get<long>(), row["deviation"].get<double>());
  o.details = to_json(r);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks = {
      {"riccati_closed_form", riccati_closed_form},
      {"sigma1_zero_degeneration", sigma1_degeneration},
      {"bellman_residual_identity", bellman_identity},
      {"verification_optimality_gap", optimality_gap},
      {"dpp_inequality", dpp_inequality},
      {"flow_property", flow_property},
      {"ito_generator", ito_generator},
      {"lifted_gradient", lifted_gradient},
      {"propagation_of_chaos", propagation_of_chaos},
  };
  Json report = Json::object();
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto& [name, fn] = checks[i];
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("exception: ") + e.what();
    }
    const double runtime = seconds_since(start);
    if (!o.pass) ++failures;
    std::printf("%s [%zu] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, name, o.summary.c_str(), runtime);
    std::fflush(stdout);
    report[name] = Json{{"pass", o.pass}, {"summary", o.summary}, {"runtime_s", runtime}, {"details", o.details}};
  }
  std::ofstream("acceptance_report.json") << report.dump(2) << '\n';
  std::printf("%d of %zu properties passed\n", static_cast<int>(checks.size()) - failures, checks.size());
  return failures == 0 ? 0 : 1;
}
