/**
 * @file lq_model.hpp
 * @brief Linear-quadratic McKean-Vlasov problem: affine coefficients, quadratic
 *        costs, their lifts to measures, and the gain matrices U, V, S, Z, Y.
 *
 * State dimension d, control dimension m. The idiosyncratic and the common
 * Brownian motions are scalar, so sigma and sigma0 are R^d-valued:
 *
 *   b(x, mu, a)      = b0     + B x  + Bbar  mubar + C  a(x)
 *   sigma(x, mu, a)  = theta  + D x  + Dbar  mubar + F  a(x)
 *   sigma0(x, mu, a) = theta0 + D0 x + D0bar mubar + F0 a(x)
 *
 *   f(x, mu, a) = x'Q2 x + mubar'Q2bar mubar + a'R2 a + 2 x'M2 a
 *   g(x, mu)    = x'P2 x + mubar'P2bar mubar
 */

#pragma once

#include "mvlq/core.hpp"
#include "mvlq/measure.hpp"

#include <string>

namespace mvlq {

struct LqDynamics {
  Vector b0;
  Matrix B, Bbar, C;
  Vector theta;
  Matrix D, Dbar, F;
  Vector theta0;
  Matrix D0, D0bar, F0;

  static LqDynamics zeros(Index d, Index m) {
    LqDynamics dyn;
    dyn.b0 = Vector::Zero(d);
    dyn.B = dyn.Bbar = Matrix::Zero(d, d);
    dyn.C = Matrix::Zero(d, m);
    dyn.theta = Vector::Zero(d);
    dyn.D = dyn.Dbar = Matrix::Zero(d, d);
    dyn.F = Matrix::Zero(d, m);
    dyn.theta0 = Vector::Zero(d);
    dyn.D0 = dyn.D0bar = Matrix::Zero(d, d);
    dyn.F0 = Matrix::Zero(d, m);
    return dyn;
  }

  Index state_dim() const noexcept { return B.rows(); }
  Index control_dim() const noexcept { return C.cols(); }

  /// Throws DimensionMismatch / DomainError on inconsistent or non-finite blocks.
  void validate() const {
    const Index d = state_dim();
    const Index m = control_dim();
    if (d < 1 || m < 1) throw DimensionMismatch("LqDynamics: d and m must be >= 1");
    require_shape(b0, d, 1, "LqDynamics.b0");
    require_square(B, d, "LqDynamics.B");
    require_square(Bbar, d, "LqDynamics.Bbar");
    require_shape(C, d, m, "LqDynamics.C");
    require_shape(theta, d, 1, "LqDynamics.theta");
    require_square(D, d, "LqDynamics.D");
    require_square(Dbar, d, "LqDynamics.Dbar");
    require_shape(F, d, m, "LqDynamics.F");
    require_shape(theta0, d, 1, "LqDynamics.theta0");
    require_square(D0, d, "LqDynamics.D0");
    require_square(D0bar, d, "LqDynamics.D0bar");
    require_shape(F0, d, m, "LqDynamics.F0");
    for (const Matrix* blk : {&B, &Bbar, &C, &D, &Dbar, &F, &D0, &D0bar, &F0}) {
      if (!blk->allFinite()) throw DomainError("LqDynamics: non-finite coefficient");
    }
    if (!b0.allFinite() || !theta.allFinite() || !theta0.allFinite())
      throw DomainError("LqDynamics: non-finite coefficient");
  }

  Vector drift(const Vector& x, const Vector& mubar, const Vector& a) const {
    return b0 + B * x + Bbar * mubar + C * a;
  }
  Vector idio_vol(const Vector& x, const Vector& mubar, const Vector& a) const {
    return theta + D * x + Dbar * mubar + F * a;
  }
  Vector common_vol(const Vector& x, const Vector& mubar, const Vector& a) const {
    return theta0 + D0 * x + D0bar * mubar + F0 * a;
  }
};

/// Quadratic cost matrices; the symmetric blocks are symmetrized on construction.
class LqCost {
 public:
  LqCost(Matrix Q2, Matrix Q2bar, Matrix R2, Matrix P2, Matrix P2bar, Matrix M2)
      : Q2_(symmetrized(Q2)),
        Q2bar_(symmetrized(Q2bar)),
        R2_(symmetrized(R2)),
        P2_(symmetrized(P2)),
        P2bar_(symmetrized(P2bar)),
        M2_(std::move(M2)) {
    const Index d = Q2_.rows();
    const Index m = R2_.rows();
    require_square(Q2_, d, "LqCost.Q2");
    require_square(Q2bar_, d, "LqCost.Q2bar");
    require_square(R2_, m, "LqCost.R2");
    require_square(P2_, d, "LqCost.P2");
    require_square(P2bar_, d, "LqCost.P2bar");
    require_shape(M2_, d, m, "LqCost.M2");
    for (const Matrix* blk : {&Q2_, &Q2bar_, &R2_, &P2_, &P2bar_, &M2_}) {
      if (!blk->allFinite()) throw DomainError("LqCost: non-finite entry");
    }
  }

  /// Cost without cross term (M2 = 0).
  LqCost(Matrix Q2, Matrix Q2bar, Matrix R2, Matrix P2, Matrix P2bar)
      : LqCost(Q2, Q2bar, R2, P2, P2bar, Matrix::Zero(Q2.rows(), R2.rows())) {}

  static LqCost zeros(Index d, Index m) {
    return LqCost(Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(m, m), Matrix::Zero(d, d),
                  Matrix::Zero(d, d));
  }

  const Matrix& Q2() const noexcept { return Q2_; }
  const Matrix& Q2bar() const noexcept { return Q2bar_; }
  const Matrix& R2() const noexcept { return R2_; }
  const Matrix& P2() const noexcept { return P2_; }
  const Matrix& P2bar() const noexcept { return P2bar_; }
  const Matrix& M2() const noexcept { return M2_; }

  Index state_dim() const noexcept { return Q2_.rows(); }
  Index control_dim() const noexcept { return R2_.rows(); }

  /// Pointwise running cost f(x, mu, a) given mubar.
  double running(const Vector& x, const Vector& mubar, const Vector& a) const {
    return x.dot(Q2_ * x) + mubar.dot(Q2bar_ * mubar) + a.dot(R2_ * a) + 2.0 * x.dot(M2_ * a);
  }

  /// Pointwise terminal cost g(x, mu) given mubar.
  double terminal(const Vector& x, const Vector& mubar) const {
    return x.dot(P2_ * x) + mubar.dot(P2bar_ * mubar);
  }

 private:
  Matrix Q2_, Q2bar_, R2_, P2_, P2bar_, M2_;
};

inline void check_compatible(const LqDynamics& dyn, const LqCost& cost) {
  dyn.validate();
  require_same_dim(cost.state_dim(), dyn.state_dim(), "LqCost vs LqDynamics (d)");
  require_same_dim(cost.control_dim(), dyn.control_dim(), "LqCost vs LqDynamics (m)");
}

/// Lifted running cost: Var(mu)(Q2) + mubar'(Q2+Q2bar)mubar + (a*mu)_2(R2) + 2 mu(x'M2 a).
inline double lifted_running_cost(const EmpiricalMeasure& mu, const AffineMap& a, const LqCost& cost) {
  require_same_dim(mu.dim(), cost.state_dim(), "lifted_running_cost");
  require_same_dim(a.in_dim(), mu.dim(), "lifted_running_cost (control input)");
  require_same_dim(a.out_dim(), cost.control_dim(), "lifted_running_cost (control output)");
  const Vector mbar = mean(mu);
  const EmpiricalMeasure pushed = pushforward(mu, a);
  const Matrix& x = mu.points();
  const Matrix& ax = pushed.points();
  const Matrix m2a = cost.M2() * ax;
  const double cross =
      2.0 * particle_average(mu.size(), [&](Index i) { return x.col(i).dot(m2a.col(i)); });
  return variance_form(mu, cost.Q2()) + mbar.dot((cost.Q2() + cost.Q2bar()) * mbar) +
         quad_moment(pushed, cost.R2()) + cross;
}

/// Lifted terminal cost: Var(mu)(P2) + mubar'(P2+P2bar)mubar.
inline double lifted_terminal_cost(const EmpiricalMeasure& mu, const LqCost& cost) {
  require_same_dim(mu.dim(), cost.state_dim(), "lifted_terminal_cost");
  const Vector mbar = mean(mu);
  return variance_form(mu, cost.P2()) + mbar.dot((cost.P2() + cost.P2bar()) * mbar);
}

struct GainMatrices {
  double t = 0.0;
  Matrix U, V;  // m x m, symmetric
  Matrix S, Z;  // d x m
  Vector Y;     // m
  double min_eig_U = 0.0;
  double min_eig_V = 0.0;
  bool pd_ok = false;
};

/**
 * Gain matrices at time t for a Riccati state (Lam, Gam, gam):
 *
 *   U = F'Lam F + F0'Lam F0 + R2
 *   V = F'Lam F + F0'Gam F0 + R2
 *   S = D'Lam F + D0'Lam F0 + Lam C + M2
 *   Z = (D+Dbar)'Lam F + (D0+D0bar)'Gam F0 + Gam C + M2
 *   Y = C'gam + 2 F'Lam theta + 2 F0'Gam theta0
 */
inline GainMatrices gains(double t, const Matrix& Lam, const Matrix& Gam, const Vector& gam,
                          const LqDynamics& dyn, const LqCost& cost) {
  GainMatrices g;
  g.t = t;
  g.U = symmetrized(dyn.F.transpose() * Lam * dyn.F + dyn.F0.transpose() * Lam * dyn.F0 + cost.R2());
  g.V = symmetrized(dyn.F.transpose() * Lam * dyn.F + dyn.F0.transpose() * Gam * dyn.F0 + cost.R2());
  g.S = dyn.D.transpose() * Lam * dyn.F + dyn.D0.transpose() * Lam * dyn.F0 + Lam * dyn.C + cost.M2();
  g.Z = (dyn.D + dyn.Dbar).transpose() * Lam * dyn.F + (dyn.D0 + dyn.D0bar).transpose() * Gam * dyn.F0 +
        Gam * dyn.C + cost.M2();
  g.Y = dyn.C.transpose() * gam + 2.0 * dyn.F.transpose() * (Lam * dyn.theta) +
        2.0 * dyn.F0.transpose() * (Gam * dyn.theta0);
  g.min_eig_U = min_eigenvalue(g.U);
  g.min_eig_V = min_eigenvalue(g.V);
  g.pd_ok = g.min_eig_U > kPdThreshold && g.min_eig_V > kPdThreshold;
  return g;
}

struct StandingConditionReport {
  bool P2_psd = false;
  bool P2_plus_P2bar_psd = false;
  bool Q2_psd = false;
  bool Q2_plus_Q2bar_psd = false;
  bool R2_bounded_below = false;

  bool pass() const noexcept {
    return P2_psd && P2_plus_P2bar_psd && Q2_psd && Q2_plus_Q2bar_psd && R2_bounded_below;
  }
  std::string failures() const {
    std::string out;
    auto add = [&](bool ok, const char* name) {
      if (!ok) out += out.empty() ? name : std::string(", ") + name;
    };
    add(P2_psd, "P2 >= 0");
    add(P2_plus_P2bar_psd, "P2 + P2bar >= 0");
    add(Q2_psd, "Q2 >= 0");
    add(Q2_plus_Q2bar_psd, "Q2 + Q2bar >= 0");
    add(R2_bounded_below, "R2 >= delta I");
    return out;
  }
};

/// Eigenvalue test of the sufficient condition for well-posed Riccati equations.
inline StandingConditionReport check_standing_condition(const LqCost& cost, double delta) {
  if (!(delta > 0.0)) throw DomainError("check_standing_condition: delta must be > 0");
  // Eigenvalues of exactly-PSD matrices can come out at -1e-16.
  constexpr double slack = 1e-12;
  StandingConditionReport r;
  r.P2_psd = min_eigenvalue(cost.P2()) >= -slack;
  r.P2_plus_P2bar_psd = min_eigenvalue(cost.P2() + cost.P2bar()) >= -slack;
  r.Q2_psd = min_eigenvalue(cost.Q2()) >= -slack;
  r.Q2_plus_Q2bar_psd = min_eigenvalue(cost.Q2() + cost.Q2bar()) >= -slack;
  r.R2_bounded_below = min_eigenvalue(cost.R2()) >= delta - slack;
  return r;
}

}  // namespace mvlq
