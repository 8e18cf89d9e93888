// Interbank lending with common noise: Riccati solution against the closed
// form, then the optimal particle system against the value w(0, delta_x0).
//
//   interbank_demo [particles] [paths]

#include "mvlq/mvlq.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace mvlq;
  const Index N = argc > 1 ? std::atol(argv[1]) : 500;
  const std::size_t M = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 50;

  SystemicRiskParams p;
  p.kappa = 1.0;
  p.q = 0.5;
  p.eta = 1.0;
  p.c = 1.0;
  p.sigma0 = 1.0;
  p.sigma1 = 0.0;
  p.rho = 0.5;

  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  const auto [dp, dm] = systemic_risk_deltas(p);
  std::printf("delta+ = %.10f  delta- = %.10f\n", dp, dm);

  std::printf("%6s %14s %14s\n", "t", "Lambda", "closed form");
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
    std::printf("%6.2f %14.10f %14.10f\n", t, qv.solution().eval(t).Lam(0, 0), closed_form_lambda(p, t));

  // The optimal borrowing rate at the conditional mean plus one unit.
  const FeedbackGains fb = qv.optimal_feedback(0.0);
  std::printf("alpha(0, x0 + 1) = %.10f\n", recover_original(fb, p, p.x0 + 1.0, p.x0));

  SimulationConfig cfg;
  cfg.T = p.T;
  cfg.dt = 1e-3;
  cfg.seed = 2024;
  const LqParticleModel model(dyn, cost);
  const EmpiricalMeasure mu0 = EmpiricalMeasure::point_mass(Vector::Constant(1, p.x0), N);
  const CostEstimate est = estimate_cost(model, optimal_control_spec(qv), mu0, M, cfg);
  std::printf("N = %ld, M = %zu: cost %.6f +- %.6f, value %.6f\n", static_cast<long>(N), M, est.mean,
              est.std_error, qv.value(0.0, mu0));
  return 0;
}
