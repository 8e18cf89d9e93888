#include <catch_amalgamated.hpp>

#include "mvlq/riccati.hpp"

#include <random>
#include <sstream>

using namespace mvlq;
using Catch::Approx;

namespace {

SystemicRiskParams criterion_params() {
  SystemicRiskParams p;
  p.kappa = 1.0;
  p.q = 0.5;
  p.eta = 1.0;
  p.c = 1.0;
  p.sigma1 = 0.3;
  p.rho = 0.5;
  p.T = 1.0;
  return p;
}

// Scalar interbank Lam equation written out by hand:
//   Lam' = 2(kappa + q - sigma1^2/2) Lam + 2 Lam^2 - (eta - q^2)/2.
double scalar_lambda_rhs(const SystemicRiskParams& p, double lam) {
  return 2.0 * (p.kappa + p.q - 0.5 * p.sigma1 * p.sigma1) * lam + 2.0 * lam * lam - 0.5 * (p.eta - p.q * p.q);
}

// Plain scalar RK4 from T back to 0.
double scalar_rk4_lambda0(const SystemicRiskParams& p, long steps) {
  const double h = -p.T / static_cast<double>(steps);
  double y = 0.5 * p.c;
  for (long k = 0; k < steps; ++k) {
    const double k1 = scalar_lambda_rhs(p, y);
    const double k2 = scalar_lambda_rhs(p, y + 0.5 * h * k1);
    const double k3 = scalar_lambda_rhs(p, y + 0.5 * h * k2);
    const double k4 = scalar_lambda_rhs(p, y + h * k3);
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

double max_closed_form_error(const SystemicRiskParams& p, double h) {
  const auto [dyn, cost] = systemic_risk_model(p);
  const RiccatiSolution sol = solve_riccati(dyn, cost, p.T, h);
  double err = 0.0;
  for (std::size_t k = 0; k < sol.nodes(); ++k)
    err = std::max(err, std::abs(sol.Lam[k](0, 0) - closed_form_lambda(p, sol.grid[k])));
  return err;
}

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

}  // namespace

TEST_CASE("systemic_risk_model coefficients", "[riccati]") {
  SystemicRiskParams p;
  p.kappa = 1.0;
  p.q = 0.5;
  p.eta = 1.0;
  const auto [dyn, cost] = systemic_risk_model(p);
  CHECK(dyn.B(0, 0) == -1.5);
  CHECK(dyn.Bbar(0, 0) == 1.5);
  CHECK(dyn.C(0, 0) == 1.0);
  CHECK(cost.Q2()(0, 0) == 0.375);
  CHECK(cost.Q2bar()(0, 0) == -0.375);
  CHECK(cost.R2()(0, 0) == 0.5);
  CHECK(cost.P2()(0, 0) == 0.5);
  CHECK(cost.P2bar()(0, 0) == -0.5);
  CHECK(cost.M2().isZero(0.0));

  SystemicRiskParams r;
  r.sigma0 = 0.8;
  r.sigma1 = 0.0;
  r.rho = 1.0;
  const auto [d2, c2] = systemic_risk_model(r);
  CHECK(d2.D(0, 0) == 0.0);
  CHECK(d2.D0(0, 0) == 0.0);
  CHECK(d2.D0bar(0, 0) == 0.0);
  CHECK(d2.theta(0) == 0.0);
  CHECK(d2.theta0(0) == 0.8);
  CHECK(d2.F.isZero(0.0));
  CHECK(d2.F0.isZero(0.0));

  SystemicRiskParams bad;
  bad.rho = 1.5;
  CHECK_THROWS_AS(systemic_risk_model(bad), DomainError);
  bad = {};
  bad.T = 0.0;
  CHECK_THROWS_AS(systemic_risk_model(bad), DomainError);
}

TEST_CASE("generic Lam right-hand side equals the scalar interbank equation", "[riccati]") {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    SystemicRiskParams p;
    p.kappa = 2.0 * u(gen);
    p.eta = 0.1 + 2.0 * u(gen);
    p.q = std::sqrt(p.eta) * u(gen);
    p.c = 2.0 * u(gen);
    p.sigma0 = u(gen);
    p.sigma1 = u(gen);
    p.rho = 2.0 * u(gen) - 1.0;
    const auto [dyn, cost] = systemic_risk_model(p);
    RiccatiState s{Matrix::Constant(1, 1, 3.0 * u(gen)), Matrix::Constant(1, 1, 3.0 * u(gen)),
                   Vector::Constant(1, u(gen)), 0.0};
    const double t = u(gen);
    const RiccatiState ds = riccati_rhs(t, s, dyn, cost);
    const double expected = scalar_lambda_rhs(p, s.Lam(0, 0));
    CHECK(std::abs(ds.Lam(0, 0) - expected) <= 1e-12 * (1.0 + std::abs(expected)));
  }
}

TEST_CASE("systemic_risk_deltas", "[riccati]") {
  SystemicRiskParams p;
  p.kappa = 1.0;
  p.q = 0.0;
  p.eta = 1.0;
  const auto [dp, dm] = systemic_risk_deltas(p);
  CHECK(dp == Approx(-1.0 + std::sqrt(2.0)));
  CHECK(dm == Approx(-1.0 - std::sqrt(2.0)));
  p.q = 2.0;
  CHECK_THROWS_AS(systemic_risk_deltas(p), DomainError);
}

TEST_CASE("closed_form_lambda", "[riccati]") {
  SystemicRiskParams p = criterion_params();
  CHECK(closed_form_lambda(p, p.T) == Approx(0.5 * p.c).epsilon(1e-15));

  SystemicRiskParams zero;
  zero.q = 1.0;
  zero.eta = 1.0;
  zero.c = 0.0;
  for (double t : {0.0, 0.3, 1.0}) CHECK(closed_form_lambda(zero, t) == 0.0);

  SystemicRiskParams base;  // kappa = 1, q = 0, eta = 1, c = 1, sigma1 = 0, T = 1
  CHECK(std::abs(closed_form_lambda(base, 0.0) - scalar_rk4_lambda0(base, 1000000)) <= 1e-9);
  CHECK(std::abs(closed_form_lambda(p, 0.0) - scalar_rk4_lambda0(p, 1000000)) <= 1e-9);

  // delta+ = delta- = 0 degenerates to c / (2(1 + c(T - t))).
  SystemicRiskParams flat;
  flat.kappa = 0.0;
  flat.q = 0.0;
  flat.eta = 0.0;
  flat.c = 2.0;
  CHECK(closed_form_lambda(flat, 0.25) == Approx(1.0 / (1.0 + 2.0 * 0.75)).epsilon(1e-15));
  CHECK(std::abs(closed_form_lambda(flat, 0.0) - scalar_rk4_lambda0(flat, 100000)) <= 1e-12);

  CHECK_THROWS_AS(closed_form_lambda(p, -0.1), DomainError);
  CHECK_THROWS_AS(closed_form_lambda(p, 1.1), DomainError);
  p.q = 1.5;
  CHECK_THROWS_AS(closed_form_lambda(p, 0.0), DomainError);
}

TEST_CASE("closed_form_lambda is positive", "[riccati][property]") {
  std::mt19937_64 gen(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    SystemicRiskParams p;
    p.kappa = 3.0 * u(gen);
    p.eta = 3.0 * u(gen);
    p.q = std::sqrt(p.eta) * u(gen);
    p.c = 0.01 + 3.0 * u(gen);
    p.sigma1 = u(gen);
    p.T = 0.1 + 3.0 * u(gen);
    for (int j = 0; j <= 10; ++j) CHECK(closed_form_lambda(p, j == 10 ? p.T : p.T * j / 10.0) > 0.0);
  }
}

TEST_CASE("RK4 matches the closed form", "[riccati]") {
  CHECK(max_closed_form_error(criterion_params(), 1e-3) <= 1e-8);
  SystemicRiskParams base;
  CHECK(max_closed_form_error(base, 1e-3) <= 1e-8);
}

TEST_CASE("RK4 converges at fourth order", "[riccati]") {
  const SystemicRiskParams p = criterion_params();
  const double hs[] = {0.2, 0.1, 0.05, 0.025};
  double prev = max_closed_form_error(p, hs[0]);
  for (int i = 1; i < 4; ++i) {
    const double err = max_closed_form_error(p, hs[i]);
    const double ratio = prev / err;
    INFO("h = " << hs[i] << " ratio " << ratio);
    CHECK(ratio >= 8.0);
    CHECK(ratio <= 32.0);
    prev = err;
  }
}

TEST_CASE("sigma1 = 0 keeps Gam and gam at zero", "[riccati]") {
  SystemicRiskParams p = criterion_params();
  p.sigma1 = 0.0;
  const auto [dyn, cost] = systemic_risk_model(p);
  const RiccatiSolution sol = solve_riccati(dyn, cost, p.T, 1e-3);
  for (std::size_t k = 0; k < sol.nodes(); ++k) {
    CHECK(std::abs(sol.Gam[k](0, 0)) <= 1e-14);
    CHECK(std::abs(sol.gam[k](0)) <= 1e-14);
  }
}

TEST_CASE("solve_riccati grid and terminal data", "[riccati]") {
  std::mt19937_64 gen(47);
  LqDynamics dyn = LqDynamics::zeros(2, 1);
  dyn.B = random_matrix(gen, 2, 2);
  dyn.C = random_matrix(gen, 2, 1);
  dyn.theta = random_matrix(gen, 2, 1);
  const Matrix P2 = random_psd(gen, 2);
  const Matrix P2bar = random_psd(gen, 2);
  const LqCost cost(random_psd(gen, 2), Matrix::Zero(2, 2), Matrix::Identity(1, 1), P2, P2bar);
  const RiccatiSolution sol = solve_riccati(dyn, cost, 2.0, 0.01);
  REQUIRE(sol.nodes() == 201);
  CHECK(sol.grid.front() == 0.0);
  CHECK(sol.grid.back() == 2.0);
  CHECK(sol.Lam.back() == cost.P2());
  CHECK(sol.Gam.back() == cost.P2() + cost.P2bar());
  CHECK(sol.gam.back().isZero(0.0));
  CHECK(sol.chi.back() == 0.0);

  CHECK_THROWS_AS(solve_riccati(dyn, cost, 1.0, 0.3), DomainError);
  CHECK_THROWS_AS(solve_riccati(dyn, cost, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(solve_riccati(dyn, cost, 1.0, -0.1), DomainError);
}

TEST_CASE("Riccati solutions stay symmetric and PSD under the standing condition", "[riccati][property]") {
  std::mt19937_64 gen(53);
  for (int rep = 0; rep < 20; ++rep) {
    const Index d = 1 + rep % 3;
    const Index m = 1 + rep % 2;
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
    const Matrix Q2 = random_psd(gen, d, 0.5);
    const Matrix P2 = random_psd(gen, d, 0.5);
    const LqCost cost(Q2, random_psd(gen, d, 0.5), Matrix::Identity(m, m) + random_psd(gen, m, 0.3), P2,
                      random_psd(gen, d, 0.5));
    REQUIRE(check_standing_condition(cost, 0.5).pass());
    const RiccatiSolution sol = solve_riccati(dyn, cost, 1.0, 0.01);
    for (std::size_t k = 0; k < sol.nodes(); ++k) {
      CHECK(sol.Lam[k] == sol.Lam[k].transpose());
      CHECK(sol.Gam[k] == sol.Gam[k].transpose());
      CHECK(min_eigenvalue(sol.Lam[k]) >= -1e-12);
      CHECK(min_eigenvalue(sol.Gam[k]) >= -1e-12);
      CHECK(sol.min_eig_U[k] > kPdThreshold);
      CHECK(sol.min_eig_V[k] > kPdThreshold);
    }
  }
}

TEST_CASE("NonPositiveGain is raised for singular R2", "[riccati]") {
  LqDynamics dyn = LqDynamics::zeros(1, 1);
  dyn.C(0, 0) = 1.0;
  const LqCost cost(Matrix::Identity(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Identity(1, 1),
                    Matrix::Zero(1, 1));
  try {
    solve_riccati(dyn, cost, 1.0, 0.1);
    FAIL("expected NonPositiveGain");
  } catch (const NonPositiveGain& e) {
    CHECK(e.time() == 1.0);
    CHECK(e.min_eigenvalue() == 0.0);
  }
}

TEST_CASE("NumericalBlowup on a finite-time explosion", "[riccati]") {
  // Lam' = Lam^2 with Lam(T) = -2 explodes at T - 1/2.
  LqDynamics dyn = LqDynamics::zeros(1, 1);
  dyn.C(0, 0) = 1.0;
  const LqCost cost(Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Identity(1, 1),
                    Matrix::Constant(1, 1, -2.0), Matrix::Zero(1, 1));
  CHECK_THROWS_AS(solve_riccati(dyn, cost, 2.0, 0.01), NumericalBlowup);
}

TEST_CASE("RiccatiSolution::eval", "[riccati]") {
  const SystemicRiskParams p = criterion_params();
  const auto [dyn, cost] = systemic_risk_model(p);
  const RiccatiSolution sol = solve_riccati(dyn, cost, p.T, 0.01);
  for (std::size_t k = 0; k < sol.nodes(); ++k) {
    const RiccatiState s = sol.eval(sol.grid[k]);
    CHECK(s.Lam == sol.Lam[k]);
    CHECK(s.Gam == sol.Gam[k]);
    CHECK(s.gam == sol.gam[k]);
    CHECK(s.chi == sol.chi[k]);
  }
  // Midpoints are the average of the neighbours.
  const double mid = 0.5 * (sol.grid[10] + sol.grid[11]);
  CHECK(sol.eval(mid).Lam(0, 0) == Approx(0.5 * (sol.Lam[10](0, 0) + sol.Lam[11](0, 0))).epsilon(1e-14));
  // Continuity across a node.
  const double t = sol.grid[37];
  CHECK(std::abs(sol.eval(std::nextafter(t, 0.0)).Lam(0, 0) - sol.Lam[37](0, 0)) <= 1e-12);
  CHECK(std::abs(sol.eval(std::nextafter(t, 1.0)).Lam(0, 0) - sol.Lam[37](0, 0)) <= 1e-12);
  CHECK_THROWS_AS(sol.eval(-1e-9), DomainError);
  CHECK_THROWS_AS(sol.eval(1.0 + 1e-9), DomainError);
}

TEST_CASE("solve_riccati is bit-reproducible", "[riccati]") {
  const SystemicRiskParams p = criterion_params();
  const auto [dyn, cost] = systemic_risk_model(p);
  const RiccatiSolution a = solve_riccati(dyn, cost, p.T, 1e-3);
  const RiccatiSolution b = solve_riccati(dyn, cost, p.T, 1e-3);
  std::ostringstream sa, sb;
  write_riccati_csv(sa, a);
  write_riccati_csv(sb, b);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("write_riccati_csv layout", "[riccati][io]") {
  LqDynamics dyn = LqDynamics::zeros(2, 1);
  dyn.C(0, 0) = 1.0;
  const LqCost cost(Matrix::Identity(2, 2), Matrix::Zero(2, 2), Matrix::Identity(1, 1), Matrix::Identity(2, 2),
                    Matrix::Zero(2, 2));
  const RiccatiSolution sol = solve_riccati(dyn, cost, 1.0, 0.5);
  std::ostringstream os;
  write_riccati_csv(os, sol);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header ==
        "t,Lam_00,Lam_01,Lam_10,Lam_11,Gam_00,Gam_01,Gam_10,Gam_11,gam_0,gam_1,chi,minEigU,minEigV");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == 3);
}
