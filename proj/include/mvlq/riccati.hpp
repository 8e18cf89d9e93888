/**
 * @file riccati.hpp
 * @brief Backward integration of the coupled (Lam, Gam, gam, chi) system that
 *        parametrizes the quadratic value function, and the closed-form
 *        interbank solution.
 */

#pragma once

#include "mvlq/core.hpp"
#include "mvlq/lq_model.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <utility>
#include <vector>

namespace mvlq {

/// One point of the Riccati flow.
struct RiccatiState {
  Matrix Lam;  // d x d
  Matrix Gam;  // d x d
  Vector gam;  // d
  double chi = 0.0;

  RiccatiState& operator+=(const RiccatiState& o) {
    Lam += o.Lam;
    Gam += o.Gam;
    gam += o.gam;
    chi += o.chi;
    return *this;
  }
  friend RiccatiState operator+(RiccatiState a, const RiccatiState& b) { return a += b; }
  friend RiccatiState operator*(double s, RiccatiState a) {
    a.Lam *= s;
    a.Gam *= s;
    a.gam *= s;
    a.chi *= s;
    return a;
  }
};

namespace detail {

inline Eigen::LLT<Matrix> factor_gain(const Matrix& m, double t) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NonPositiveGain(t, min_eigenvalue(m));
  return llt;
}

}  // namespace detail

/**
 * Time derivative of the Riccati state:
 *
 *   Lam' = -[Q2 + D'Lam D + D0'Lam D0 + Lam B + B'Lam - S U^-1 S']
 *   Gam' = -[Q2 + Q2bar + (D+Dbar)'Lam(D+Dbar) + (D0+D0bar)'Gam(D0+D0bar)
 *            + Gam(B+Bbar) + (B+Bbar)'Gam - Z V^-1 Z']
 *   gam' = -[(B+Bbar)'gam - Z V^-1 Y + 2(D+Dbar)'Lam theta
 *            + 2(D0+D0bar)'Gam theta0 + 2 Gam b0]
 *   chi' = -[-Y'V^-1 Y / 4 + gam'b0 + theta'Lam theta + theta0'Gam theta0]
 *
 * Throws NonPositiveGain when U or V has no Cholesky factor.
 */
inline RiccatiState riccati_rhs(double t, const RiccatiState& s, const LqDynamics& dyn,
                                const LqCost& cost) {
  const GainMatrices g = gains(t, s.Lam, s.Gam, s.gam, dyn, cost);
  const auto lltU = detail::factor_gain(g.U, t);
  const auto lltV = detail::factor_gain(g.V, t);
  const Matrix Bsum = dyn.B + dyn.Bbar;
  const Matrix Dsum = dyn.D + dyn.Dbar;
  const Matrix D0sum = dyn.D0 + dyn.D0bar;
  const Matrix UinvSt = lltU.solve(g.S.transpose());
  const Matrix VinvZt = lltV.solve(g.Z.transpose());
  const Vector VinvY = lltV.solve(g.Y);

  RiccatiState ds;
  ds.Lam = -(cost.Q2() + dyn.D.transpose() * s.Lam * dyn.D + dyn.D0.transpose() * s.Lam * dyn.D0 +
             s.Lam * dyn.B + dyn.B.transpose() * s.Lam - g.S * UinvSt);
  ds.Gam = -(cost.Q2() + cost.Q2bar() + Dsum.transpose() * s.Lam * Dsum +
             D0sum.transpose() * s.Gam * D0sum + s.Gam * Bsum + Bsum.transpose() * s.Gam -
             g.Z * VinvZt);
  ds.gam = -(Bsum.transpose() * s.gam - g.Z * VinvY + 2.0 * Dsum.transpose() * (s.Lam * dyn.theta) +
             2.0 * D0sum.transpose() * (s.Gam * dyn.theta0) + 2.0 * s.Gam * dyn.b0);
  ds.chi = -(-0.25 * g.Y.dot(VinvY) + s.gam.dot(dyn.b0) + dyn.theta.dot(s.Lam * dyn.theta) +
             dyn.theta0.dot(s.Gam * dyn.theta0));
  return ds;
}

/// Nodal solution on a uniform grid t_k = T k / K.
struct RiccatiSolution {
  std::vector<double> grid;
  std::vector<Matrix> Lam;
  std::vector<Matrix> Gam;
  std::vector<Vector> gam;
  std::vector<double> chi;
  std::vector<double> min_eig_U;
  std::vector<double> min_eig_V;

  double horizon() const { return grid.back(); }
  std::size_t nodes() const { return grid.size(); }
  Index state_dim() const { return Lam.front().rows(); }

  RiccatiState node(std::size_t k) const { return {Lam[k], Gam[k], gam[k], chi[k]}; }

  /// Linear interpolation between bracketing nodes; exact at nodes.
  RiccatiState eval(double t) const {
    const double T = horizon();
    if (!(t >= grid.front() && t <= T)) throw DomainError("RiccatiSolution::eval: t outside [0, T]");
    const std::size_t K = grid.size() - 1;
    const double pos = (t - grid.front()) / (T - grid.front()) * static_cast<double>(K);
    auto k = static_cast<std::size_t>(std::floor(pos));
    if (k >= K) return node(K);
    if (t == grid[k]) return node(k);
    if (t == grid[k + 1]) return node(k + 1);
    // Guard against floor() landing one cell off for t close to a node.
    if (t < grid[k] && k > 0) --k;
    if (t > grid[k + 1] && k + 1 < K) ++k;
    const double w = (t - grid[k]) / (grid[k + 1] - grid[k]);
    RiccatiState s = (1.0 - w) * node(k) + w * node(k + 1);
    s.Lam = symmetrized(s.Lam);
    s.Gam = symmetrized(s.Gam);
    return s;
  }
};

namespace detail {

inline void check_state(const RiccatiState& s, double t) {
  if (exceeds_blowup(s.Lam) || exceeds_blowup(s.Gam) || exceeds_blowup(s.gam) ||
      !std::isfinite(s.chi) || std::abs(s.chi) > kBlowupThreshold) {
    std::ostringstream os;
    os.precision(17);
    os << "Riccati solution blew up near t=" << t;
    throw NumericalBlowup(os.str());
  }
}

inline RiccatiState symmetrize_state(RiccatiState s) {
  s.Lam = symmetrized(s.Lam);
  s.Gam = symmetrized(s.Gam);
  return s;
}

}  // namespace detail

/**
 * Classical RK4 backward from the terminal data Lam = P2, Gam = P2 + P2bar,
 * gam = 0, chi = 0. Lam and Gam are symmetrized after every stage. Gains are
 * re-evaluated at every node and the min eigenvalues of U and V recorded.
 *
 * Throws NonPositiveGain (min eig <= 1e-10 at a node) or NumericalBlowup.
 */
inline RiccatiSolution solve_riccati(const LqDynamics& dyn, const LqCost& cost, double T, double h) {
  check_compatible(dyn, cost);
  if (!(T > 0.0) || !(h > 0.0)) throw DomainError("solve_riccati: T and h must be positive");
  const double steps = T / h;
  const auto K = static_cast<std::size_t>(std::llround(steps));
  if (K < 2 || std::abs(steps - static_cast<double>(K)) > 1e-9 * std::max(1.0, steps)) {
    throw DomainError("solve_riccati: step must divide the horizon into at least 2 steps");
  }
  const Index d = dyn.state_dim();

  RiccatiSolution sol;
  sol.grid.resize(K + 1);
  for (std::size_t k = 0; k <= K; ++k) sol.grid[k] = T * static_cast<double>(k) / static_cast<double>(K);
  sol.grid[K] = T;
  sol.Lam.resize(K + 1);
  sol.Gam.resize(K + 1);
  sol.gam.resize(K + 1);
  sol.chi.resize(K + 1);
  sol.min_eig_U.resize(K + 1);
  sol.min_eig_V.resize(K + 1);

  RiccatiState y{cost.P2(), cost.P2() + cost.P2bar(), Vector::Zero(d), 0.0};

  auto record = [&](std::size_t k) {
    const double t = sol.grid[k];
    const GainMatrices g = gains(t, y.Lam, y.Gam, y.gam, dyn, cost);
    sol.Lam[k] = y.Lam;
    sol.Gam[k] = y.Gam;
    sol.gam[k] = y.gam;
    sol.chi[k] = y.chi;
    sol.min_eig_U[k] = g.min_eig_U;
    sol.min_eig_V[k] = g.min_eig_V;
    if (!g.pd_ok) throw NonPositiveGain(t, std::min(g.min_eig_U, g.min_eig_V));
  };

  record(K);
  for (std::size_t k = K; k-- > 0;) {
    const double t1 = sol.grid[k + 1];
    const double dt = sol.grid[k] - t1;  // negative
    const double tm = t1 + 0.5 * dt;
    const RiccatiState k1 = riccati_rhs(t1, y, dyn, cost);
    const RiccatiState k2 = riccati_rhs(tm, detail::symmetrize_state(y + (0.5 * dt) * k1), dyn, cost);
    const RiccatiState k3 = riccati_rhs(tm, detail::symmetrize_state(y + (0.5 * dt) * k2), dyn, cost);
    const RiccatiState k4 = riccati_rhs(sol.grid[k], detail::symmetrize_state(y + dt * k3), dyn, cost);
    y = detail::symmetrize_state(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    detail::check_state(y, sol.grid[k]);
    record(k);
  }
  return sol;
}

/// Riccati CSV: t, Lam_ij..., Gam_ij..., gam_i..., chi, minEigU, minEigV.
inline void write_riccati_csv(std::ostream& os, const RiccatiSolution& sol) {
  const Index d = sol.state_dim();
  os << 't';
  for (const char* name : {"Lam", "Gam"})
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) os << ',' << name << '_' << i << j;
  for (Index i = 0; i < d; ++i) os << ",gam_" << i;
  os << ",chi,minEigU,minEigV\n";
  for (std::size_t k = 0; k < sol.nodes(); ++k) {
    os << format_double(sol.grid[k]);
    for (const Matrix* m : {&sol.Lam[k], &sol.Gam[k]})
      for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) os << ',' << format_double((*m)(i, j));
    for (Index i = 0; i < d; ++i) os << ',' << format_double(sol.gam[k](i));
    os << ',' << format_double(sol.chi[k]) << ',' << format_double(sol.min_eig_U[k]) << ','
       << format_double(sol.min_eig_V[k]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Interbank systemic-risk model.

struct SystemicRiskParams {
  double kappa = 1.0;   // mean-reversion rate of interbank lending
  double q = 0.0;       // borrowing incentive
  double eta = 1.0;     // running penalty on departure from the average
  double c = 1.0;       // terminal penalty
  double sigma0 = 1.0;  // affine volatility: sigma0 + sigma1 x
  double sigma1 = 0.0;
  double rho = 0.0;     // weight of the common noise
  double T = 1.0;
  double x0 = 0.0;

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(kappa) || !finite(q) || !finite(eta) || !finite(c) || !finite(sigma0) ||
        !finite(sigma1) || !finite(rho) || !finite(T) || !finite(x0))
      throw DomainError("SystemicRiskParams: non-finite parameter");
    if (kappa < 0.0) throw DomainError("SystemicRiskParams: kappa must be >= 0");
    if (q < 0.0) throw DomainError("SystemicRiskParams: q must be >= 0");
    if (eta < 0.0) throw DomainError("SystemicRiskParams: eta must be >= 0");
    if (c < 0.0) throw DomainError("SystemicRiskParams: c must be >= 0");
    if (sigma0 < 0.0) throw DomainError("SystemicRiskParams: sigma0 must be >= 0");
    if (rho < -1.0 || rho > 1.0) throw DomainError("SystemicRiskParams: rho must lie in [-1, 1]");
    if (!(T > 0.0)) throw DomainError("SystemicRiskParams: T must be > 0");
  }
};

/// (delta+, delta-) = -(kappa + q - sigma1^2/2) +- sqrt((kappa + q - sigma1^2/2)^2 + eta - q^2).
inline std::pair<double, double> systemic_risk_deltas(const SystemicRiskParams& p) {
  if (p.q * p.q > p.eta) throw DomainError("closed form requires q^2 <= eta");
  const double a = p.kappa + p.q - 0.5 * p.sigma1 * p.sigma1;
  const double root = std::sqrt(a * a + p.eta - p.q * p.q);
  return {-a + root, -a - root};
}

/// Explicit solution of the scalar Lam equation of the interbank model.
inline double closed_form_lambda(const SystemicRiskParams& p, double t) {
  if (p.q * p.q > p.eta) throw DomainError("closed_form_lambda: requires q^2 <= eta");
  if (!(t >= 0.0 && t <= p.T)) throw DomainError("closed_form_lambda: t outside [0, T]");
  const auto [dp, dm] = systemic_risk_deltas(p);
  const double tau = p.T - t;
  const double spread = dp - dm;
  const double forcing = p.eta - p.q * p.q;
  if (spread <= 1e-300) {
    // delta+ = delta- = 0: Lam' = 2 Lam^2, Lam(T) = c/2.
    return 0.5 * p.c / (1.0 + p.c * tau);
  }
  const double e = std::exp(spread * tau);
  const double num = forcing * std::expm1(spread * tau) + p.c * (dp * e - dm);
  const double den = p.c * std::expm1(spread * tau) + dp - dm * e;
  return 0.5 * num / den;
}

/**
 * LQ data of the interbank model in the transformed control
 * alpha~ = alpha - q(E[X|W0] - X):
 *
 *   b0 = 0, B = -(kappa+q), Bbar = kappa+q, C = 1,
 *   D = sigma1 sqrt(1-rho^2), D0 = sigma1 rho, theta = sigma0 sqrt(1-rho^2), theta0 = sigma0 rho,
 *   Q2 = (eta-q^2)/2 = -Q2bar, R2 = 1/2, P2 = c/2 = -P2bar, M2 = 0.
 */
inline std::pair<LqDynamics, LqCost> systemic_risk_model(const SystemicRiskParams& p) {
  p.validate();
  LqDynamics dyn = LqDynamics::zeros(1, 1);
  const double rate = p.kappa + p.q;
  const double idio = std::sqrt(1.0 - p.rho * p.rho);
  dyn.B(0, 0) = -rate;
  dyn.Bbar(0, 0) = rate;
  dyn.C(0, 0) = 1.0;
  dyn.D(0, 0) = p.sigma1 * idio;
  dyn.D0(0, 0) = p.sigma1 * p.rho;
  dyn.theta(0) = p.sigma0 * idio;
  dyn.theta0(0) = p.sigma0 * p.rho;
  const double q2 = 0.5 * (p.eta - p.q * p.q);
  auto scalar = [](double v) { return Matrix::Constant(1, 1, v); };
  LqCost cost(scalar(q2), scalar(-q2), scalar(0.5), scalar(0.5 * p.c), scalar(-0.5 * p.c));
  return {std::move(dyn), std::move(cost)};
}

}  // namespace mvlq
