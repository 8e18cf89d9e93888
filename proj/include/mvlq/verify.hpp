/**
 * @file verify.hpp
 * @brief Numerical certificates for the dynamic-programming structure:
 *        Monte Carlo cost estimates, the Bellman residual on particle clouds,
 *        the measure-flow generator, the DPP gap, lifted finite-difference
 *        gradients and propagation-of-chaos tables.
 */

#pragma once

#include "mvlq/core.hpp"
#include "mvlq/lq_model.hpp"
#include "mvlq/measure.hpp"
#include "mvlq/policy.hpp"
#include "mvlq/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mvlq {

/// The optimal feedback of a quadratic value function as a simulator control.
inline ControlSpec optimal_control_spec(const QuadraticValue& qv) {
  return ControlSpec::feedback(qv.dynamics().control_dim(), [qv](double t) {
    const FeedbackGains fb = qv.optimal_feedback(t);
    return ControlSpec::Gains{fb.K1, fb.K2, fb.k};
  });
}

// ---------------------------------------------------------------------------
// Monte Carlo plumbing

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t M = 0;
  Index N = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
};

struct SampleSummary {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Pairwise mean and standard error (sample std / sqrt(M)).
inline SampleSummary summarize(const std::vector<double>& xs) {
  const std::size_t M = xs.size();
  if (M < 2) throw DomainError("summarize: need at least 2 samples");
  const double m = pairwise_sum(M, [&](std::size_t i) { return xs[i]; }) / static_cast<double>(M);
  const double ss = pairwise_sum(M, [&](std::size_t i) { return (xs[i] - m) * (xs[i] - m); });
  return {m, std::sqrt(ss / static_cast<double>(M - 1)) / std::sqrt(static_cast<double>(M))};
}

/**
 * Runs fn(path) for path = 0..M-1 on up to `threads` workers. Results are
 * written by index by the caller, so the outcome does not depend on the
 * thread count. The exception of the lowest failing path is rethrown.
 */
template <class Fn>
void for_each_path(std::size_t M, unsigned threads, const Fn& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, M));
  if (threads <= 1) {
    for (std::size_t p = 0; p < M; ++p) fn(p);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex guard;
  std::size_t failed_path = M;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t p = next++; p < M; p = next++) {
        try {
          fn(p);
        } catch (...) {
          std::lock_guard lock(guard);
          if (p < failed_path) {
            failed_path = p;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Pathwise costs of M independent common-noise paths (path index = sample index).
template <ParticleDynamics Dyn>
std::vector<double> path_costs(const Dyn& dyn, const ControlSpec& control, const EmpiricalMeasure& mu0, std::size_t M,
                               const SimulationConfig& base, unsigned threads = 0) {
  require_same_dim(mu0.dim(), dyn.state_dim(), "path_costs");
  std::vector<double> out(M);
  for_each_path(M, threads, [&](std::size_t p) {
    SimulationConfig cfg = base;
    cfg.path = static_cast<std::uint32_t>(p);
    CostAccumulator<Dyn> acc(dyn, cfg.dt);
    run_particles(dyn, control, mu0.points(), cfg, 0, [&](const StepView& v) { acc(v); });
    out[p] = acc.total();
  });
  return out;
}

/// J(t0, mu0, control) averaged over M common-noise paths; seed and grid from `base`.
template <ParticleDynamics Dyn>
CostEstimate estimate_cost(const Dyn& dyn, const ControlSpec& control, const EmpiricalMeasure& mu0, std::size_t M,
                           const SimulationConfig& base, unsigned threads = 0) {
  if (M < 2) throw DomainError("estimate_cost: M must be >= 2");
  const SampleSummary s = summarize(path_costs(dyn, control, mu0, M, base, threads));
  return {s.mean, s.std_error, M, mu0.size(), base.dt, base.seed};
}

/// The same Brownian paths on the grid of step 2 dt.
inline SimulationConfig coarsened(const SimulationConfig& cfg) {
  SimulationConfig c = cfg;
  c.dt = 2.0 * cfg.dt;
  c.noise_substeps = 2 * cfg.noise_substeps;
  return c;
}

/**
 * First-order Richardson estimate of the O(dt) bias of a fine-grid statistic
 * from the same statistic on the grid of step 2 dt: bias(dt) ~ |s(2dt) - s(dt)|.
 */
inline double richardson_bias(double coarse, double fine) { return std::abs(coarse - fine); }

// ---------------------------------------------------------------------------
// Generator of a quadratic functional along the controlled measure flow

struct GeneratorTerms {
  double first_order = 0.0;   // mu(L^a phi)
  double second_order = 0.0;  // (mu x mu)(M^a phi)
  double total() const noexcept { return first_order + second_order; }
};

/**
 * mu(L^a phi) + mu x mu(M^a phi) on the cloud x with per-particle controls:
 *
 *   L^a phi(x)      = d_mu phi(x) . b + tr(d_x d_mu phi (sigma sigma' + sigma0 sigma0')) / 2
 *   M^a phi(x, x')  = tr(d2_mu phi sigma0(x) sigma0(x')') / 2
 *
 * The second term is evaluated as a full double sum over particle pairs.
 */
template <ParticleDynamics Dyn>
GeneratorTerms quadratic_generator(const QuadraticFunctional& phi, const Dyn& dyn, double t, const Matrix& x,
                                   const Vector& mubar, const Matrix& controls) {
  const Index d = dyn.state_dim();
  const Index n = dyn.idio_dim();
  const Index m0 = dyn.common_dim();
  const Index N = x.cols();
  require_same_dim(phi.dim(), d, "quadratic_generator");
  const CloudState state{t, x, mubar, controls};
  Matrix b(d, N), sig(d * n, N), sig0(d * m0, N);
  dyn.drift(state, b);
  dyn.idio_vol(state, sig);
  dyn.common_vol(state, sig0);

  const Matrix hess = phi.dx_dmu();
  const Matrix cross = phi.d2_mu();

  GeneratorTerms out;
  out.first_order = particle_average(N, [&](Index i) {
    const Eigen::Map<const Matrix> s(sig.col(i).data(), d, n);
    const Eigen::Map<const Matrix> s0(sig0.col(i).data(), d, m0);
    const double diffusion = 0.5 * ((hess * s).cwiseProduct(s).sum() + (hess * s0).cwiseProduct(s0).sum());
    return phi.d_mu(mubar, x.col(i)).dot(b.col(i)) + diffusion;
  });

  // cross * sigma0_i, reused across the inner sum.
  Matrix weighted(d * m0, N);
  for (Index i = 0; i < N; ++i) {
    Eigen::Map<Matrix>(weighted.col(i).data(), d, m0) =
        cross * Eigen::Map<const Matrix>(sig0.col(i).data(), d, m0);
  }
  out.second_order = particle_average(N, [&](Index i) {
    return particle_average(N, [&](Index j) { return 0.5 * sig0.col(j).dot(weighted.col(i)); });
  });
  return out;
}

// ---------------------------------------------------------------------------
// Bellman residual

struct BellmanResidual {
  double residual = 0.0;
  double d_t = 0.0;
  double running = 0.0;
  GeneratorTerms generator;
  /// Sum of magnitudes of the individual terms; the natural scale for rounding error.
  double scale() const noexcept {
    return std::abs(d_t) + std::abs(running) + std::abs(generator.first_order) + std::abs(generator.second_order);
  }
};

/**
 * d_t w + fhat(mu, a) + mu(L^a w) + mu x mu(M^a w) for the value w of `qv` and an
 * affine control a. Non-negative for every a and zero at the optimal feedback.
 */
inline BellmanResidual bellman_residual(const QuadraticValue& qv, double t, const EmpiricalMeasure& mu,
                                        const AffineMap& a) {
  if (!(t >= 0.0 && t < qv.horizon())) throw DomainError("bellman_residual: t must lie in [0, T)");
  const LqParticleModel model(qv.dynamics(), qv.cost());
  const RiccatiState s = qv.solution().eval(t);
  const QuadraticFunctional w = QuadraticFunctional::from_state(s);
  const QuadraticFunctional rate = QuadraticFunctional::from_state(riccati_rhs(t, s, qv.dynamics(), qv.cost()));
  const Vector mubar = mean(mu);
  const Matrix controls = a.apply(mu.points());

  BellmanResidual r;
  r.d_t = rate(mu);
  r.running = lifted_running_cost(mu, a, qv.cost());
  r.generator = quadratic_generator(w, model, t, mu.points(), mubar, controls);
  r.residual = r.d_t + r.running + r.generator.total();
  return r;
}

/**
 * Square-completion gap G(a) - G(a*) = Var((a - a*) * mu)(U) + dbar' V dbar,
 * dbar the mean of (a - a*) * mu. Evaluated from the gains only.
 */
inline double completion_gap(const QuadraticValue& qv, double t, const EmpiricalMeasure& mu, const AffineMap& a) {
  const GainMatrices g = qv.gains_at(t);
  const AffineMap best = qv.optimal_control(t, mu);
  const AffineMap diff{a.K - best.K, a.k - best.k};
  const EmpiricalMeasure pushed = pushforward(mu, diff);
  const Vector dbar = mean(pushed);
  return variance_form(pushed, g.U) + dbar.dot(g.V * dbar);
}

// ---------------------------------------------------------------------------
// DPP

struct DppGap {
  double theta = 0.0;
  double gap = 0.0;
  double std_error = 0.0;
};

/**
 * For each theta in `thetas` (grid nodes of [t, T]):
 *   gap(theta) = E0[ sum_{t_k < theta} fhat dt + w(theta, rho_theta) ] - w(t, mu).
 * One simulation per path serves every theta.
 */
template <ParticleDynamics Dyn>
std::vector<DppGap> dpp_check(const QuadraticValue& qv, const Dyn& dyn, const EmpiricalMeasure& mu,
                              const std::vector<double>& thetas, const ControlSpec& control, std::size_t M,
                              const SimulationConfig& base, unsigned threads = 0) {
  if (M < 2) throw DomainError("dpp_check: M must be >= 2");
  const std::size_t K = base.steps();
  std::vector<std::size_t> nodes;
  for (double theta : thetas) {
    if (!(theta >= base.t0 && theta <= base.T)) throw DomainError("dpp_check: theta outside [t, T]");
    const double pos = (theta - base.t0) / base.dt;
    const auto node = static_cast<std::size_t>(std::llround(pos));
    if (std::abs(pos - static_cast<double>(node)) > 1e-9 * std::max(1.0, pos) || node > K)
      throw DomainError("dpp_check: theta must be a grid node");
    nodes.push_back(node);
  }
  const double w0 = qv.value(base.t0, mu);
  const std::size_t last = nodes.empty() ? 0 : *std::max_element(nodes.begin(), nodes.end());

  std::vector<std::vector<double>> samples(nodes.size(), std::vector<double>(M));
  for_each_path(M, threads, [&](std::size_t p) {
    SimulationConfig cfg = base;
    cfg.path = static_cast<std::uint32_t>(p);
    double running = 0.0;
    Vector buffer;
    // Stop early: run on the truncated horizon ending at the last theta.
    SimulationConfig run_cfg = cfg;
    run_cfg.T = cfg.time(last, K);
    run_particles(dyn, control, mu.points(), run_cfg, 0, [&](const StepView& v) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (nodes[j] == v.step) {
          const QuadraticFunctional w = qv.functional_at(cfg.time(v.step, K));
          const Vector& m = v.mean;
          samples[j][p] = running + variance_form(EmpiricalMeasure(v.x), w.L) + m.dot(w.G * m) + w.g.dot(m) + w.c;
        }
      }
      if (v.controls) running += lifted_running(dyn, v.t, v.x, v.mean, *v.controls, buffer) * cfg.dt;
    });
  });

  std::vector<DppGap> out;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    if (nodes[j] == 0) {
      out.push_back({thetas[j], 0.0, 0.0});
      continue;
    }
    const SampleSummary s = summarize(samples[j]);
    out.push_back({thetas[j], s.mean - w0, s.std_error});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ito formula along the flow of conditional laws

struct ItoCheck {
  double lhs = 0.0;         // (E0[phi(rho_{t+delta})] - phi(rho_t)) / delta
  double lhs_std_error = 0.0;
  double rhs = 0.0;         // mu(L^a phi) + mu x mu(M^a phi) at the initial cloud
  GeneratorTerms generator;
};

/**
 * Compares the Monte Carlo time derivative of E0[phi(rho_s)] at s = t0 with
 * the generator evaluated on the initial cloud, for a constant control a.
 */
template <ParticleDynamics Dyn>
ItoCheck ito_generator_check(const Dyn& dyn, const AffineMap& a, const EmpiricalMeasure& mu,
                             const QuadraticFunctional& phi, double delta, std::size_t M, const SimulationConfig& base,
                             unsigned threads = 0) {
  if (M < 2) throw DomainError("ito_generator_check: M must be >= 2");
  if (!(delta > 0.0)) throw DomainError("ito_generator_check: delta must be > 0");
  SimulationConfig cfg = base;
  cfg.T = base.t0 + delta;
  cfg.steps();  // delta must be a multiple of dt
  const ControlSpec control = ControlSpec::constant(a);

  ItoCheck out;
  const Vector mubar = mean(mu);
  out.generator = quadratic_generator(phi, dyn, base.t0, mu.points(), mubar, a.apply(mu.points()));
  out.rhs = out.generator.total();

  const double phi0 = phi(mu);
  std::vector<double> diffs(M);
  for_each_path(M, threads, [&](std::size_t p) {
    SimulationConfig c = cfg;
    c.path = static_cast<std::uint32_t>(p);
    run_particles(dyn, control, mu.points(), c, 0, [&](const StepView& v) {
      if (!v.controls) diffs[p] = (phi(EmpiricalMeasure(v.x)) - phi0) / delta;
    });
  });
  const SampleSummary s = summarize(diffs);
  out.lhs = s.mean;
  out.lhs_std_error = s.std_error;
  return out;
}

// ---------------------------------------------------------------------------
// Lifted gradient

/**
 * Central differences of w(t, .) in each particle coordinate against
 * (1/N) d_mu w(t, mu)(x_i). Errors are normalized by the largest analytic
 * entry (absolute when the gradient vanishes identically).
 */
inline double grad_check(const QuadraticValue& qv, double t, const EmpiricalMeasure& mu, double epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("grad_check: epsilon must be > 0");
  const QuadraticFunctional w = qv.functional_at(t);
  const Vector mubar = mean(mu);
  const Index N = mu.size();
  const Index d = mu.dim();
  Matrix analytic(d, N);
  for (Index i = 0; i < N; ++i) analytic.col(i) = w.d_mu(mubar, mu.point(i)) / static_cast<double>(N);
  const double scale = analytic.cwiseAbs().maxCoeff();
  double worst = 0.0;
  Matrix pts = mu.points();
  for (Index i = 0; i < N; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double orig = pts(j, i);
      pts(j, i) = orig + epsilon;
      const double up = w(EmpiricalMeasure(pts));
      pts(j, i) = orig - epsilon;
      const double down = w(EmpiricalMeasure(pts));
      pts(j, i) = orig;
      const double fd = (up - down) / (2.0 * epsilon);
      const double err = std::abs(fd - analytic(j, i));
      worst = std::max(worst, scale > 0.0 ? err / scale : err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Propagation of chaos

struct ChaosRow {
  Index N = 0;
  double mean = 0.0;
  double std_error = 0.0;
};

/**
 * Cost estimates for each particle count in `Ns` (ascending, at least two).
 * With `richardson`, each path contributes 2 c(dt) - c(2dt) computed on the
 * same Brownian path, which removes the first-order time-step bias.
 */
template <ParticleDynamics Dyn>
std::vector<ChaosRow> chaos_convergence(const Dyn& dyn, const ControlSpec& control, const InitialSpec& init,
                                        const std::vector<Index>& Ns, std::size_t M, const SimulationConfig& base,
                                        unsigned threads = 0, bool richardson = false) {
  if (Ns.size() < 2) throw DomainError("chaos_convergence: need at least two particle counts");
  if (!std::is_sorted(Ns.begin(), Ns.end())) throw DomainError("chaos_convergence: particle counts must ascend");
  if (M < 2) throw DomainError("chaos_convergence: M must be >= 2");
  std::vector<ChaosRow> rows;
  for (Index N : Ns) {
    const EmpiricalMeasure mu0 = sample_initial(init, N, base.seed);
    std::vector<double> costs = path_costs(dyn, control, mu0, M, base, threads);
    if (richardson) {
      const std::vector<double> coarse = path_costs(dyn, control, mu0, M, coarsened(base), threads);
      for (std::size_t p = 0; p < M; ++p) costs[p] = 2.0 * costs[p] - coarse[p];
    }
    const SampleSummary s = summarize(costs);
    rows.push_back({N, s.mean, s.std_error});
  }
  return rows;
}

/**
 * Trend test on |mean(N) - reference|: it must decrease from each level to the
 * next, except for at most one inversion whose size is within 2 combined
 * standard errors.
 */
inline bool chaos_trend_ok(const std::vector<ChaosRow>& rows, double reference) {
  int inversions = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double prev = std::abs(rows[i - 1].mean - reference);
    const double cur = std::abs(rows[i].mean - reference);
    if (cur < prev) continue;
    const double tol = 2.0 * std::hypot(rows[i - 1].std_error, rows[i].std_error);
    if (cur - prev > tol) return false;
    ++inversions;
  }
  return inversions <= 1;
}

}  // namespace mvlq
