/**
 * @file policy.hpp
 * @brief Quadratic value functions on measures and the optimal affine feedback.
 *
 * A quadratic functional on P2(R^d),
 *
 *   phi(mu) = Var(mu)(L) + mubar' G mubar + g' mubar + c,
 *
 * has Lions derivatives
 *
 *   d_mu phi(mu)(x)        = 2 L (x - mubar) + 2 G mubar + g
 *   d_x d_mu phi(mu)(x)    = 2 L
 *   d2_mu phi(mu)(x, x')   = 2 (G - L)
 *
 * The value function is the member of this family with coefficients
 * (Lam(t), Gam(t), gam(t), chi(t)) from the Riccati flow.
 */

#pragma once

#include "mvlq/core.hpp"
#include "mvlq/lq_model.hpp"
#include "mvlq/measure.hpp"
#include "mvlq/riccati.hpp"

#include <memory>
#include <ostream>

namespace mvlq {

struct QuadraticFunctional {
  Matrix L;  // variance weight
  Matrix G;  // mean quadratic weight
  Vector g;  // mean linear weight
  double c = 0.0;

  static QuadraticFunctional from_state(const RiccatiState& s) { return {s.Lam, s.Gam, s.gam, s.chi}; }

  Index dim() const noexcept { return L.rows(); }

  double operator()(const EmpiricalMeasure& mu) const {
    require_same_dim(mu.dim(), dim(), "QuadraticFunctional");
    const Vector m = mean(mu);
    return variance_form(mu, L) + m.dot(G * m) + g.dot(m) + c;
  }

  Vector d_mu(const Vector& mubar, const Vector& x) const {
    return 2.0 * L * (x - mubar) + 2.0 * G * mubar + g;
  }
  Matrix dx_dmu() const { return 2.0 * L; }
  Matrix d2_mu() const { return 2.0 * (G - L); }
};

struct ValueDerivatives {
  double d_t = 0.0;
  Vector d_mu;
  Matrix dx_dmu;
  Matrix d2_mu;
};

/// Affine feedback a(x, mu) = K1 (x - mubar) + K2 mubar + k at a fixed time.
struct FeedbackGains {
  double t = 0.0;
  Matrix K1;  // m x d
  Matrix K2;  // m x d
  Vector k;   // m

  Vector operator()(const Vector& x, const Vector& mubar) const { return K1 * (x - mubar) + K2 * mubar + k; }

  /// The control x -> a(x, mu) once mubar is frozen.
  AffineMap at_mean(const Vector& mubar) const { return {K1, (K2 - K1) * mubar + k}; }

  static FeedbackGains zeros(Index d, Index m) {
    return {0.0, Matrix::Zero(m, d), Matrix::Zero(m, d), Vector::Zero(m)};
  }
};

class QuadraticValue {
 public:
  QuadraticValue(std::shared_ptr<const RiccatiSolution> sol, LqDynamics dyn, LqCost cost)
      : sol_(std::move(sol)), dyn_(std::move(dyn)), cost_(std::move(cost)) {
    check_compatible(dyn_, cost_);
    if (!sol_) throw DomainError("QuadraticValue: missing Riccati solution");
    require_same_dim(sol_->state_dim(), dyn_.state_dim(), "QuadraticValue");
  }

  /// Solves the Riccati system on [0, T] with step h.
  static QuadraticValue solve(const LqDynamics& dyn, const LqCost& cost, double T, double h) {
    return QuadraticValue(std::make_shared<const RiccatiSolution>(solve_riccati(dyn, cost, T, h)), dyn,
                          cost);
  }

  const RiccatiSolution& solution() const noexcept { return *sol_; }
  const std::shared_ptr<const RiccatiSolution>& solution_ptr() const noexcept { return sol_; }
  const LqDynamics& dynamics() const noexcept { return dyn_; }
  const LqCost& cost() const noexcept { return cost_; }
  double horizon() const { return sol_->horizon(); }

  QuadraticFunctional functional_at(double t) const { return QuadraticFunctional::from_state(sol_->eval(t)); }

  double value(double t, const EmpiricalMeasure& mu) const { return functional_at(t)(mu); }

  /**
   * Time derivative from the Riccati right-hand side at the interpolated
   * state, plus the three measure derivatives at (x, x').
   */
  ValueDerivatives value_derivatives(double t, const EmpiricalMeasure& mu, const Vector& x,
                                     const Vector& xp) const {
    require_same_dim(x.size(), mu.dim(), "value_derivatives");
    require_same_dim(xp.size(), mu.dim(), "value_derivatives");
    const RiccatiState s = sol_->eval(t);
    const QuadraticFunctional rate = QuadraticFunctional::from_state(riccati_rhs(t, s, dyn_, cost_));
    const QuadraticFunctional w = QuadraticFunctional::from_state(s);
    const Vector m = mean(mu);
    return {rate(mu), w.d_mu(m, x), w.dx_dmu(), w.d2_mu()};
  }

  GainMatrices gains_at(double t) const {
    const RiccatiState s = sol_->eval(t);
    return gains(t, s.Lam, s.Gam, s.gam, dyn_, cost_);
  }

  /// K1 = -U^-1 S', K2 = -V^-1 Z', k = -V^-1 Y / 2 via Cholesky solves.
  FeedbackGains optimal_feedback(double t) const {
    const GainMatrices g = gains_at(t);
    Eigen::LLT<Matrix> lltU(g.U);
    Eigen::LLT<Matrix> lltV(g.V);
    if (!g.pd_ok || lltU.info() != Eigen::Success || lltV.info() != Eigen::Success)
      throw NonPositiveGain(t, std::min(g.min_eig_U, g.min_eig_V));
    return {t, -lltU.solve(g.S.transpose()), -lltV.solve(g.Z.transpose()), -0.5 * lltV.solve(g.Y)};
  }

  /// The minimizer a*(t, ., mu) as an affine map on R^d.
  AffineMap optimal_control(double t, const EmpiricalMeasure& mu) const {
    return optimal_feedback(t).at_mean(mean(mu));
  }

 private:
  std::shared_ptr<const RiccatiSolution> sol_;
  LqDynamics dyn_;
  LqCost cost_;
};

/**
 * Interbank model: convert the transformed control alpha~ back to the original
 * borrowing rate, alpha = alpha~ - q (x - mubar).
 */
inline double recover_original(const FeedbackGains& policy, const SystemicRiskParams& p, double x,
                               double mubar) {
  Vector xv(1), mv(1);
  xv(0) = x;
  mv(0) = mubar;
  const double transformed = policy(xv, mv)(0);
  return transformed - p.q * (x - mubar);
}

/// Policy CSV on the Riccati grid: t, K1_ij..., K2_ij..., k_i...
inline void write_policy_csv(std::ostream& os, const QuadraticValue& qv) {
  const RiccatiSolution& sol = qv.solution();
  const Index d = qv.dynamics().state_dim();
  const Index m = qv.dynamics().control_dim();
  os << 't';
  for (const char* name : {"K1", "K2"})
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < d; ++j) os << ',' << name << '_' << i << j;
  for (Index i = 0; i < m; ++i) os << ",k_" << i;
  os << '\n';
  for (double t : sol.grid) {
    const FeedbackGains fb = qv.optimal_feedback(t);
    os << format_double(t);
    for (const Matrix* K : {&fb.K1, &fb.K2})
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < d; ++j) os << ',' << format_double((*K)(i, j));
    for (Index i = 0; i < m; ++i) os << ',' << format_double(fb.k(i));
    os << '\n';
  }
}

}  // namespace mvlq
