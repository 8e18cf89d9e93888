#include <catch_amalgamated.hpp>

#include "mvlq/policy.hpp"

#include <random>
#include <sstream>

using namespace mvlq;
using Catch::Approx;

namespace {

Matrix random_matrix(std::mt19937_64& gen, Index r, Index c, double s = 1.0) {
  std::normal_distribution<double> z(0.0, s);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = z(gen);
  return m;
}

Matrix random_psd(std::mt19937_64& gen, Index d, double s = 1.0) {
  const Matrix a = random_matrix(gen, d, d, s);
  return a * a.transpose();
}

QuadraticValue random_value(std::mt19937_64& gen, Index d, Index m) {
  LqDynamics dyn = LqDynamics::zeros(d, m);
  dyn.b0 = random_matrix(gen, d, 1, 0.5);
  dyn.B = random_matrix(gen, d, d, 0.5);
  dyn.Bbar = random_matrix(gen, d, d, 0.5);
  dyn.C = random_matrix(gen, d, m, 0.5);
  dyn.theta = random_matrix(gen, d, 1, 0.5);
  dyn.D = random_matrix(gen, d, d, 0.3);
  dyn.Dbar = random_matrix(gen, d, d, 0.3);
  dyn.F = random_matrix(gen, d, m, 0.3);
  dyn.theta0 = random_matrix(gen, d, 1, 0.5);
  dyn.D0 = random_matrix(gen, d, d, 0.3);
  dyn.D0bar = random_matrix(gen, d, d, 0.3);
  dyn.F0 = random_matrix(gen, d, m, 0.3);
  const LqCost cost(random_psd(gen, d, 0.5), random_psd(gen, d, 0.5), Matrix::Identity(m, m), random_psd(gen, d, 0.5),
                    random_psd(gen, d, 0.5));
  return QuadraticValue::solve(dyn, cost, 1.0, 0.01);
}

SystemicRiskParams interbank(double sigma1) {
  SystemicRiskParams p;
  p.kappa = 1.0;
  p.q = 0.5;
  p.eta = 1.0;
  p.c = 1.0;
  p.sigma0 = 0.7;
  p.sigma1 = sigma1;
  p.rho = 0.5;
  return p;
}

}  // namespace

TEST_CASE("value of a point mass", "[policy]") {
  std::mt19937_64 gen(61);
  const QuadraticValue qv = random_value(gen, 2, 1);
  Vector x(2);
  x << 0.4, -1.1;
  for (double t : {0.0, 0.305, 1.0}) {
    const RiccatiState s = qv.solution().eval(t);
    const double expected = x.dot(s.Gam * x) + x.dot(s.gam) + s.chi;
    CHECK(qv.value(t, EmpiricalMeasure::point_mass(x, 4)) == Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("value at T is the lifted terminal cost", "[policy][property]") {
  std::mt19937_64 gen(67);
  const QuadraticValue qv = random_value(gen, 3, 2);
  for (int rep = 0; rep < 50; ++rep) {
    const EmpiricalMeasure mu(random_matrix(gen, 3, 1 + rep, 2.0));
    const double terminal = lifted_terminal_cost(mu, qv.cost());
    CHECK(qv.value(1.0, mu) == Approx(terminal).margin(1e-12 * (1.0 + std::abs(terminal))));
  }
}

TEST_CASE("interbank value at a point mass with sigma1 = 0", "[policy]") {
  SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  // Composite Simpson quadrature of sigma0^2 (1 - rho^2) Lam over [0, T] with the closed form.
  const int n = 20000;
  const double h = p.T / n;
  double s = closed_form_lambda(p, 0.0) + closed_form_lambda(p, p.T);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * closed_form_lambda(p, i * h);
  const double oracle = p.sigma0 * p.sigma0 * (1.0 - p.rho * p.rho) * s * h / 3.0;
  CHECK(qv.value(0.0, EmpiricalMeasure::from_scalars({0.3})) == Approx(oracle).epsilon(1e-9));
}

TEST_CASE("value_derivatives formulas", "[policy]") {
  std::mt19937_64 gen(71);
  const QuadraticValue qv = random_value(gen, 2, 2);
  const EmpiricalMeasure mu(random_matrix(gen, 2, 7));
  const Vector x = random_matrix(gen, 2, 1);
  const Vector xp = random_matrix(gen, 2, 1);
  const double t = 0.4321;
  const ValueDerivatives dv = qv.value_derivatives(t, mu, x, xp);
  const RiccatiState s = qv.solution().eval(t);
  CHECK(dv.dx_dmu == 2.0 * s.Lam);
  CHECK(dv.d2_mu == 2.0 * (s.Gam - s.Lam));
  const Vector m = mean(mu);
  CHECK((dv.d_mu - (2.0 * s.Lam * (x - m) + 2.0 * s.Gam * m + s.gam)).norm() <= 1e-13);

  // d_t assembles the ODE right-hand sides into the functional.
  const RiccatiState r = riccati_rhs(t, s, qv.dynamics(), qv.cost());
  const double expected = variance_form(mu, r.Lam) + m.dot(r.Gam * m) + r.gam.dot(m) + r.chi;
  CHECK(dv.d_t == Approx(expected).epsilon(1e-12));

  // Centered point with Gam = gam = 0.
  const QuadraticFunctional f{s.Lam, Matrix::Zero(2, 2), Vector::Zero(2), 0.0};
  CHECK(f.d_mu(m, m).isZero(0.0));
}

TEST_CASE("d_t agrees with a central difference in time", "[policy]") {
  std::mt19937_64 gen(73);
  LqDynamics dyn = LqDynamics::zeros(2, 1);
  dyn.B = random_matrix(gen, 2, 2, 0.5);
  dyn.Bbar = random_matrix(gen, 2, 2, 0.5);
  dyn.C = random_matrix(gen, 2, 1);
  dyn.theta = random_matrix(gen, 2, 1);
  dyn.theta0 = random_matrix(gen, 2, 1);
  dyn.b0 = random_matrix(gen, 2, 1);
  const LqCost cost(random_psd(gen, 2), random_psd(gen, 2), Matrix::Identity(1, 1), random_psd(gen, 2),
                    random_psd(gen, 2));
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, 1.0, 1e-4);
  const EmpiricalMeasure mu(random_matrix(gen, 2, 5));
  const double t = 0.5, e = 1e-2;
  const double fd = (qv.value(t + e, mu) - qv.value(t - e, mu)) / (2.0 * e);
  const double dt = qv.value_derivatives(t, mu, Vector::Zero(2), Vector::Zero(2)).d_t;
  CHECK(dt == Approx(fd).epsilon(1e-3));
}

TEST_CASE("d_mu matches the lifted finite difference", "[policy]") {
  std::mt19937_64 gen(79);
  const QuadraticValue qv = random_value(gen, 3, 1);
  const double eps = 1e-5;
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 2 + rep;
    const Matrix pts = random_matrix(gen, 3, n);
    const double t = 0.05 * rep;
    const QuadraticFunctional w = qv.functional_at(t);
    const Vector m = pts.rowwise().mean();
    const Index i = rep % n;
    const Vector grad = w.d_mu(m, pts.col(i));
    for (Index j = 0; j < 3; ++j) {
      Matrix up = pts, dn = pts;
      up(j, i) += eps;
      dn(j, i) -= eps;
      const double fd =
          (w(EmpiricalMeasure(up)) - w(EmpiricalMeasure(dn))) / (2.0 * eps) * static_cast<double>(n);
      CHECK(std::abs(fd - grad(j)) <= 1e-6 * std::max(1.0, grad.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("interbank feedback gains", "[policy]") {
  const SystemicRiskParams p = interbank(0.3);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 1e-3);
  for (double t : {0.0, 0.25, 0.7, 1.0}) {
    const RiccatiState s = qv.solution().eval(t);
    const FeedbackGains fb = qv.optimal_feedback(t);
    CHECK(fb.K1(0, 0) == Approx(-2.0 * s.Lam(0, 0)).epsilon(1e-14));
    CHECK(fb.K2(0, 0) == Approx(-2.0 * s.Gam(0, 0)).epsilon(1e-14));
    CHECK(fb.k(0) == Approx(-s.gam(0)).margin(1e-15));

    for (double x : {-1.0, 0.2, 2.5})
      for (double mbar : {-0.3, 0.0, 1.2}) {
        const double expected =
            -(2.0 * s.Lam(0, 0) + p.q) * (x - mbar) - 2.0 * s.Gam(0, 0) * mbar - s.gam(0);
        CHECK(recover_original(fb, p, x, mbar) == Approx(expected).margin(1e-14));
      }
    CHECK(recover_original(fb, p, 0.8, 0.8) == Approx(-2.0 * s.Gam(0, 0) * 0.8 - s.gam(0)).margin(1e-14));
  }
}

TEST_CASE("zero Riccati state gives zero feedback", "[policy]") {
  LqDynamics dyn = LqDynamics::zeros(2, 1);
  dyn.C(0, 0) = 1.0;
  const LqCost cost(Matrix::Zero(2, 2), Matrix::Zero(2, 2), Matrix::Identity(1, 1), Matrix::Zero(2, 2),
                    Matrix::Zero(2, 2));
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, 1.0, 0.1);
  const FeedbackGains fb = qv.optimal_feedback(0.3);
  CHECK(fb.K1.isZero(0.0));
  CHECK(fb.K2.isZero(0.0));
  CHECK(fb.k.isZero(0.0));
}

TEST_CASE("optimal control minimizes the Hamiltonian form", "[policy][property]") {
  // G(a) = E[a'Ua + 2 a'S'(x - m)] + a_bar'V a_bar + 2 a_bar'Z'm + a_bar'Y is minimized at a*:
  // random affine perturbations never decrease it.
  std::mt19937_64 gen(83);
  const QuadraticValue qv = random_value(gen, 2, 2);
  const double t = 0.37;
  const GainMatrices g = qv.gains_at(t);
  const EmpiricalMeasure mu(random_matrix(gen, 2, 9));
  const Vector m = mean(mu);
  auto G = [&](const AffineMap& a) {
    const EmpiricalMeasure pa = pushforward(mu, a);
    const Vector abar = mean(pa);
    double s = 0.0;
    for (Index i = 0; i < mu.size(); ++i) {
      const Vector ai = pa.point(i);
      s += ai.dot(g.U * ai) - abar.dot(g.U * abar) + 2.0 * ai.dot(g.S.transpose() * (mu.point(i) - m));
    }
    return s / static_cast<double>(mu.size()) + abar.dot(g.V * abar) + 2.0 * abar.dot(g.Z.transpose() * m) +
           abar.dot(g.Y);
  };
  const AffineMap astar = qv.optimal_control(t, mu);
  const double best = G(astar);
  for (int rep = 0; rep < 50; ++rep) {
    const AffineMap a{astar.K + random_matrix(gen, 2, 2, 0.1), astar.k + random_matrix(gen, 2, 1, 0.1)};
    CHECK(G(a) >= best - 1e-12 * (1.0 + std::abs(best)));
  }
}

TEST_CASE("write_policy_csv layout", "[policy][io]") {
  const SystemicRiskParams p = interbank(0.0);
  const auto [dyn, cost] = systemic_risk_model(p);
  const QuadraticValue qv = QuadraticValue::solve(dyn, cost, p.T, 0.25);
  std::ostringstream os;
  write_policy_csv(os, qv);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "t,K1_00,K2_00,k_0");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 5);
}
