/**
 * @file simulator.hpp
 * @brief Euler-Maruyama particle approximation of a controlled conditional
 *        McKean-Vlasov SDE driven by one common-noise path per scenario.
 *
 *   dX = b(X, rho, a) dt + sigma(X, rho, a) dB + sigma0(X, rho, a) dW0
 *
 * The N particles of one path share W0 and carry their own B. The conditional
 * law rho_t is the empirical cloud, frozen at the start of each step. All
 * randomness is a function of (seed, path, step, particle), so a path can be
 * replayed from any grid node.
 */

#pragma once

#include "mvlq/core.hpp"
#include "mvlq/lq_model.hpp"
#include "mvlq/measure.hpp"
#include "mvlq/rng.hpp"

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace mvlq {

/// Read-only view of the particle system at one grid node.
struct CloudState {
  double t;
  const Matrix& x;         // d x N
  const Vector& mean;      // d
  const Matrix& controls;  // m x N
};

/**
 * Batched coefficient interface. Volatilities are returned column-per-particle
 * with the d x n (resp. d x m0) matrix of particle i stored column-major in
 * column i.
 */
template <class D>
concept ParticleDynamics = requires(const D& dyn, const CloudState& s, Matrix& out, Vector& per_particle,
                                    double t, const Matrix& x, const Vector& mean) {
  { dyn.state_dim() } -> std::convertible_to<Index>;
  { dyn.control_dim() } -> std::convertible_to<Index>;
  { dyn.idio_dim() } -> std::convertible_to<Index>;
  { dyn.common_dim() } -> std::convertible_to<Index>;
  dyn.drift(s, out);
  dyn.idio_vol(s, out);
  dyn.common_vol(s, out);
  dyn.running_cost(s, per_particle);
  dyn.terminal_cost(t, x, mean, per_particle);
};

/// The LQ problem seen as particle dynamics (scalar idiosyncratic and common noise).
class LqParticleModel {
 public:
  LqParticleModel(LqDynamics dyn, LqCost cost) : dyn_(std::move(dyn)), cost_(std::move(cost)) {
    check_compatible(dyn_, cost_);
  }

  const LqDynamics& dynamics() const noexcept { return dyn_; }
  const LqCost& cost() const noexcept { return cost_; }

  Index state_dim() const { return dyn_.state_dim(); }
  Index control_dim() const { return dyn_.control_dim(); }
  Index idio_dim() const { return 1; }
  Index common_dim() const { return 1; }

  void drift(const CloudState& s, Matrix& out) const {
    affine_field(dyn_.b0, dyn_.B, dyn_.Bbar, dyn_.C, s, out);
  }
  void idio_vol(const CloudState& s, Matrix& out) const {
    affine_field(dyn_.theta, dyn_.D, dyn_.Dbar, dyn_.F, s, out);
  }
  void common_vol(const CloudState& s, Matrix& out) const {
    affine_field(dyn_.theta0, dyn_.D0, dyn_.D0bar, dyn_.F0, s, out);
  }

  void running_cost(const CloudState& s, Vector& out) const {
    out.setConstant(s.x.cols(), s.mean.dot(cost_.Q2bar() * s.mean));
    bilinear_columns(cost_.Q2(), s.x, s.x, 1.0, out);
    bilinear_columns(cost_.R2(), s.controls, s.controls, 1.0, out);
    if (!cost_.M2().isZero(0.0)) bilinear_columns(cost_.M2(), s.x, s.controls, 2.0, out);
  }

  void terminal_cost(double, const Matrix& x, const Vector& mean, Vector& out) const {
    out.setConstant(x.cols(), mean.dot(cost_.P2bar() * mean));
    bilinear_columns(cost_.P2(), x, x, 1.0, out);
  }

 private:
  static void affine_field(const Vector& c0, const Matrix& Kx, const Matrix& Kmean, const Matrix& Ka,
                           const CloudState& s, Matrix& out) {
    const Vector shift = c0 + Kmean * s.mean;
    out.resize(shift.size(), s.x.cols());
    out.colwise() = shift;
    apply_columns(Kx, s.x, out, true);
    apply_columns(Ka, s.controls, out, true);
  }

  LqDynamics dyn_;
  LqCost cost_;
};

// ---------------------------------------------------------------------------
// Controls

/**
 * Admissible controls: a deterministic function of (t, x, conditional mean).
 * Either a constant affine map a(x) = K x + k, or a time-varying affine
 * feedback K1(t)(x - mubar) + K2(t) mubar + k(t); optionally shifted by a
 * constant vector.
 */
class ControlSpec {
 public:
  struct Gains {
    Matrix K1, K2;
    Vector k;
  };
  using Schedule = std::function<Gains(double)>;

  static ControlSpec constant(AffineMap a) {
    ControlSpec c;
    c.shift_ = Vector::Zero(a.out_dim());
    c.law_ = std::move(a);
    return c;
  }

  static ControlSpec zero(Index d, Index m) { return constant(AffineMap::constant(d, Vector::Zero(m))); }

  static ControlSpec feedback(Index m, Schedule schedule) {
    ControlSpec c;
    c.shift_ = Vector::Zero(m);
    c.law_ = std::move(schedule);
    return c;
  }

  /// Same law plus a constant shift eps.
  ControlSpec shifted(const Vector& eps) const {
    require_same_dim(eps.size(), shift_.size(), "ControlSpec::shifted");
    ControlSpec c = *this;
    c.shift_ += eps;
    return c;
  }

  Index control_dim() const { return shift_.size(); }
  const Vector& shift() const noexcept { return shift_; }

  /// The map x -> a(t, x, mu) once t and mubar are fixed.
  AffineMap at(double t, const Vector& mubar) const {
    AffineMap a;
    if (const auto* fixed = std::get_if<AffineMap>(&law_)) {
      a = *fixed;
    } else {
      const Gains g = std::get<Schedule>(law_)(t);
      a = AffineMap{g.K1, (g.K2 - g.K1) * mubar + g.k};
    }
    a.k += shift_;
    return a;
  }

  /// Controls of all particles, m x N.
  void evaluate(double t, const Matrix& x, const Vector& mubar, Matrix& out) const {
    const AffineMap a = at(t, mubar);
    require_same_dim(a.in_dim(), x.rows(), "ControlSpec::evaluate");
    out.resize(a.k.size(), x.cols());
    out.colwise() = a.k;
    apply_columns(a.K, x, out, true);
  }

 private:
  ControlSpec() = default;
  std::variant<AffineMap, Schedule> law_;
  Vector shift_;
};

// ---------------------------------------------------------------------------
// Initial laws

struct PointInit {
  Vector x;
};
struct GaussianInit {
  Vector mean;
  Matrix cov;
};
struct CsvInit {
  std::string path;
};
using InitialSpec = std::variant<PointInit, GaussianInit, CsvInit>;

/**
 * N particles realizing the initial law, deterministic in seed. A CSV cloud
 * with exactly N rows is used as is; otherwise N rows are drawn from it with
 * replacement.
 */
inline EmpiricalMeasure sample_initial(const InitialSpec& spec, Index N, std::uint64_t seed) {
  if (N < 1) throw DomainError("sample_initial: N must be >= 1");
  if (const auto* p = std::get_if<PointInit>(&spec)) return EmpiricalMeasure::point_mass(p->x, N);
  const CounterRng rng(seed);
  if (const auto* g = std::get_if<GaussianInit>(&spec)) {
    const Index d = g->mean.size();
    require_square(g->cov, d, "sample_initial covariance");
    const Matrix cov = symmetrized(g->cov);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Vector ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-12 * scale) throw DomainError("sample_initial: covariance is not PSD");
    const Matrix root = es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Matrix z(d, N);
    for (Index i = 0; i < N; ++i)
      for (Index j = 0; j < d; ++j)
        z(j, i) = rng.normal(NoiseChannel::kInitial, 0, 0, static_cast<std::uint64_t>(i * d + j));
    Matrix pts = root * z;
    pts.colwise() += g->mean;
    return EmpiricalMeasure(std::move(pts));
  }
  const auto& csv = std::get<CsvInit>(spec);
  EmpiricalMeasure cloud = read_measure_csv(csv.path);
  if (cloud.size() == N) return cloud;
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<Index> pick(0, cloud.size() - 1);
  Matrix pts(cloud.dim(), N);
  for (Index i = 0; i < N; ++i) pts.col(i) = cloud.point(pick(gen));
  return EmpiricalMeasure(std::move(pts));
}

// ---------------------------------------------------------------------------
// Engine

struct SimulationConfig {
  double t0 = 0.0;
  double T = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  std::uint32_t path = 0;
  /// Brownian increments over one step are sums of this many finer normals;
  /// a run with (dt, r) sees the same Brownian path as one with (dt / r, 1).
  int noise_substeps = 1;
  /// Remove the cross-particle mean of the idiosyncratic increments at each
  /// step, so the cloud mean is moved by the common noise only when sigma is
  /// constant in x.
  bool center_idiosyncratic = true;

  std::size_t steps() const {
    if (!(dt > 0.0)) throw DomainError("simulation: dt must be > 0");
    if (!(T >= t0)) throw DomainError("simulation: T must be >= t0");
    if (noise_substeps < 1) throw DomainError("simulation: noise_substeps must be >= 1");
    const double n = (T - t0) / dt;
    const auto K = static_cast<std::size_t>(std::llround(n));
    if (std::abs(n - static_cast<double>(K)) > 1e-9 * std::max(1.0, n))
      throw DomainError("simulation: (T - t0) / dt must be an integer");
    return K;
  }

  /// Node time; the last node is T exactly.
  double time(std::size_t k, std::size_t K) const { return k == K ? T : t0 + static_cast<double>(k) * dt; }
};

/// What an observer sees at each node. controls and common_increment are null at the final node.
struct StepView {
  std::size_t step;
  double t;
  const Matrix& x;
  const Vector& mean;
  const Matrix* controls;
  const Vector* common_increment;
};

namespace detail {

inline void check_cloud(const Matrix& x, const SimulationConfig& cfg, std::size_t k) {
  if (exceeds_blowup(x)) {
    std::ostringstream os;
    os << "particle state blew up on path " << cfg.path << " at step " << k;
    throw NumericalBlowup(os.str());
  }
}

}  // namespace detail

/**
 * Advance the particle cloud `x` (the state at node `first_step`) to the end of
 * the grid, calling `observe` at every node. When `stored_common` is given its
 * columns replace the generated common increments (columns indexed by
 * absolute step).
 */
template <ParticleDynamics Dyn, class Observer>
void run_particles(const Dyn& dyn, const ControlSpec& control, Matrix x, const SimulationConfig& cfg,
                   std::size_t first_step, Observer&& observe, const Matrix* stored_common = nullptr) {
  const std::size_t K = cfg.steps();
  if (first_step > K) throw DomainError("run_particles: start node beyond the grid");
  const Index d = dyn.state_dim();
  const Index n = dyn.idio_dim();
  const Index m0 = dyn.common_dim();
  const Index N = x.cols();
  require_same_dim(x.rows(), d, "run_particles state");
  require_same_dim(control.control_dim(), dyn.control_dim(), "run_particles control");

  const CounterRng rng(cfg.seed);
  const int r = cfg.noise_substeps;
  const double sqrt_fine = std::sqrt(cfg.dt / r);
  Matrix controls(dyn.control_dim(), N), drift(d, N), sig(d * n, N), sig0(d * m0, N);
  Matrix dB(n, N);
  Vector dW(m0);
  Vector mean;

  for (std::size_t k = first_step;; ++k) {
    const double t = cfg.time(k, K);
    detail::check_cloud(x, cfg, k);
    mean = column_mean(x);
    if (k == K) {
      observe(StepView{k, t, x, mean, nullptr, nullptr});
      return;
    }
    control.evaluate(t, x, mean, controls);
    const CloudState state{t, x, mean, controls};
    dyn.drift(state, drift);
    dyn.idio_vol(state, sig);
    dyn.common_vol(state, sig0);

    const auto total = static_cast<std::uint64_t>(n * N);
    for (int s = 0; s < r; ++s) {
      const auto fine_step = static_cast<std::uint32_t>(k * static_cast<std::size_t>(r) + static_cast<std::size_t>(s));
      double* out = dB.data();
      for (std::uint64_t e = 0; e < total; e += 2) {
        const auto z = rng.normal_pair(NoiseChannel::kIdiosyncratic, cfg.path, fine_step,
                                       static_cast<std::uint32_t>(e >> 1));
        if (s == 0) {
          out[e] = sqrt_fine * z[0];
          if (e + 1 < total) out[e + 1] = sqrt_fine * z[1];
        } else {
          out[e] += sqrt_fine * z[0];
          if (e + 1 < total) out[e + 1] += sqrt_fine * z[1];
        }
      }
    }
    if (cfg.center_idiosyncratic) {
      for (Index j = 0; j < n; ++j) {
        const double row_mean = particle_average(N, [&](Index i) { return dB(j, i); });
        dB.row(j).array() -= row_mean;
      }
    }
    if (stored_common) {
      dW = stored_common->col(static_cast<Index>(k));
    } else {
      dW.setZero();
      for (int s = 0; s < r; ++s) {
        const auto fine_step = static_cast<std::uint32_t>(k * static_cast<std::size_t>(r) + static_cast<std::size_t>(s));
        for (Index j = 0; j < m0; ++j)
          dW(j) += sqrt_fine * rng.normal(NoiseChannel::kCommon, cfg.path, fine_step, static_cast<std::uint64_t>(j));
      }
    }

    observe(StepView{k, t, x, mean, &controls, &dW});

    x += cfg.dt * drift;
    if (n == 1) {
      x.array() += sig.array().rowwise() * dB.row(0).array();
    } else {
      for (Index i = 0; i < N; ++i)
        x.col(i) += Eigen::Map<const Matrix>(sig.col(i).data(), d, n) * dB.col(i);
    }
    if (m0 == 1) {
      x += dW(0) * sig0;
    } else {
      for (Index i = 0; i < N; ++i)
        x.col(i) += Eigen::Map<const Matrix>(sig0.col(i).data(), d, m0) * dW;
    }
  }
}

/// Stored particle path for one common-noise scenario.
struct ParticleTrajectory {
  SimulationConfig config;
  std::size_t first_step = 0;   // absolute index of times.front()
  std::vector<double> times;    // node times
  std::vector<Matrix> states;   // d x N per node
  Matrix common_increments;     // m0 x (total steps), columns by absolute step; filled from first_step on

  std::size_t nodes() const { return times.size(); }
  EmpiricalMeasure snapshot(std::size_t node) const { return EmpiricalMeasure(states.at(node)); }
  Vector mean(std::size_t node) const { return column_mean(states.at(node)); }

  /// W0(t_node) - W0(t_first), cumulated in step order.
  Vector cumulative_common(std::size_t node) const {
    Vector w = Vector::Zero(common_increments.rows());
    for (std::size_t k = first_step; k < first_step + node; ++k) w += common_increments.col(static_cast<Index>(k));
    return w;
  }

  /// Node index of time theta, if theta is (within 1e-9 dt) a grid node.
  std::optional<std::size_t> node_of(double theta) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (std::abs(times[i] - theta) <= 1e-9 * config.dt) return i;
    return std::nullopt;
  }
};

namespace detail {

template <ParticleDynamics Dyn>
ParticleTrajectory record_run(const Dyn& dyn, const ControlSpec& control, Matrix x, const SimulationConfig& cfg,
                              std::size_t first_step, const Matrix* stored_common) {
  ParticleTrajectory traj;
  traj.config = cfg;
  traj.first_step = first_step;
  const std::size_t K = cfg.steps();
  traj.common_increments = Matrix::Zero(dyn.common_dim(), static_cast<Index>(K));
  traj.times.reserve(K - first_step + 1);
  traj.states.reserve(K - first_step + 1);
  run_particles(
      dyn, control, std::move(x), cfg, first_step,
      [&](const StepView& v) {
        traj.times.push_back(v.t);
        traj.states.push_back(v.x);
        if (v.common_increment) traj.common_increments.col(static_cast<Index>(v.step)) = *v.common_increment;
      },
      stored_common);
  return traj;
}

}  // namespace detail

/// Simulate one common-noise path from mu0 at cfg.t0 to cfg.T, storing every node.
template <ParticleDynamics Dyn>
ParticleTrajectory simulate_path(const Dyn& dyn, const ControlSpec& control, const EmpiricalMeasure& mu0,
                                 const SimulationConfig& cfg) {
  require_same_dim(mu0.dim(), dyn.state_dim(), "simulate_path");
  return detail::record_run(dyn, control, mu0.points(), cfg, 0, nullptr);
}

/**
 * Re-run `traj` from its node `theta_node` with the stored common increments
 * and regenerated idiosyncratic increments. The result covers [t_theta, T] and
 * equals the corresponding suffix of `traj` bit for bit.
 */
template <ParticleDynamics Dyn>
ParticleTrajectory restart_continuation(const ParticleTrajectory& traj, const Dyn& dyn, const ControlSpec& control,
                                        std::size_t theta_node) {
  if (theta_node >= traj.nodes()) throw DomainError("restart_continuation: theta is not a node of the trajectory");
  return detail::record_run(dyn, control, traj.states[theta_node], traj.config, traj.first_step + theta_node,
                            &traj.common_increments);
}

template <ParticleDynamics Dyn>
ParticleTrajectory restart_continuation(const ParticleTrajectory& traj, const Dyn& dyn, const ControlSpec& control,
                                        double theta) {
  const auto node = traj.node_of(theta);
  if (!node) throw DomainError("restart_continuation: theta is not on the time grid");
  return restart_continuation(traj, dyn, control, *node);
}

/// Particle average of the running cost with the given controls.
template <ParticleDynamics Dyn>
double lifted_running(const Dyn& dyn, double t, const Matrix& x, const Vector& mean, const Matrix& controls,
                      Vector& per_particle) {
  dyn.running_cost(CloudState{t, x, mean, controls}, per_particle);
  return particle_average(per_particle.size(), [&](Index i) { return per_particle(i); });
}

template <ParticleDynamics Dyn>
double lifted_running(const Dyn& dyn, double t, const Matrix& x, const Vector& mean, const Matrix& controls) {
  Vector per_particle;
  return lifted_running(dyn, t, x, mean, controls, per_particle);
}

template <ParticleDynamics Dyn>
double lifted_terminal(const Dyn& dyn, double t, const Matrix& x, const Vector& mean) {
  Vector per_particle;
  dyn.terminal_cost(t, x, mean, per_particle);
  return particle_average(per_particle.size(), [&](Index i) { return per_particle(i); });
}

/**
 * Accumulates sum_k fhat(rho_k, alpha_k) dt + ghat(rho_T) along a run
 * (left-endpoint rule). Usable as a run_particles observer.
 */
template <ParticleDynamics Dyn>
class CostAccumulator {
 public:
  CostAccumulator(const Dyn& dyn, double dt) : dyn_(&dyn), dt_(dt) {}

  void operator()(const StepView& v) {
    if (v.controls) {
      running_ += lifted_running(*dyn_, v.t, v.x, v.mean, *v.controls, buffer_) * dt_;
    } else {
      terminal_ = lifted_terminal(*dyn_, v.t, v.x, v.mean);
    }
  }

  double running() const noexcept { return running_; }
  double terminal() const noexcept { return terminal_; }
  double total() const noexcept { return running_ + terminal_; }

 private:
  const Dyn* dyn_;
  double dt_;
  double running_ = 0.0;
  double terminal_ = 0.0;
  Vector buffer_;
};

/// Cost of a stored trajectory, controls re-evaluated from the stored states.
template <ParticleDynamics Dyn>
double pathwise_cost(const ParticleTrajectory& traj, const Dyn& dyn, const ControlSpec& control) {
  CostAccumulator<Dyn> acc(dyn, traj.config.dt);
  Matrix controls;
  const std::size_t K = traj.nodes() - 1;
  for (std::size_t i = 0; i <= K; ++i) {
    const Vector m = column_mean(traj.states[i]);
    if (i < K) {
      control.evaluate(traj.times[i], traj.states[i], m, controls);
      acc(StepView{traj.first_step + i, traj.times[i], traj.states[i], m, &controls, nullptr});
    } else {
      acc(StepView{traj.first_step + i, traj.times[i], traj.states[i], m, nullptr, nullptr});
    }
  }
  return acc.total();
}

// ---------------------------------------------------------------------------
// CSV emitters

/// Trajectory CSV: path, t, particle, x0..x{d-1}; every `stride`-th node and particle.
inline void write_trajectory_csv(std::ostream& os, const std::vector<ParticleTrajectory>& paths,
                                 std::size_t node_stride = 1, Index particle_stride = 1, bool header = true) {
  if (paths.empty()) return;
  const Index d = paths.front().states.front().rows();
  if (header) {
    os << "path,t,particle";
    for (Index j = 0; j < d; ++j) os << ",x" << j;
    os << '\n';
  }
  for (const auto& traj : paths) {
    for (std::size_t k = 0; k < traj.nodes(); k += node_stride) {
      const Matrix& x = traj.states[k];
      for (Index i = 0; i < x.cols(); i += particle_stride) {
        os << traj.config.path << ',' << format_double(traj.times[k]) << ',' << i;
        for (Index j = 0; j < d; ++j) os << ',' << format_double(x(j, i));
        os << '\n';
      }
    }
  }
}

/// Conditional-mean CSV: path, t, mean_0..mean_{d-1}, W0_cum (first common component).
inline void write_mean_csv(std::ostream& os, const std::vector<ParticleTrajectory>& paths, bool header = true) {
  if (paths.empty()) return;
  const Index d = paths.front().states.front().rows();
  if (header) {
    os << "path,t";
    for (Index j = 0; j < d; ++j) os << ",mean_" << j;
    os << ",W0_cum\n";
  }
  for (const auto& traj : paths) {
    double w = 0.0;
    for (std::size_t k = 0; k < traj.nodes(); ++k) {
      const Vector m = traj.mean(k);
      os << traj.config.path << ',' << format_double(traj.times[k]);
      for (Index j = 0; j < d; ++j) os << ',' << format_double(m(j));
      os << ',' << format_double(w) << '\n';
      if (k + 1 < traj.nodes() && traj.common_increments.rows() > 0)
        w += traj.common_increments(0, static_cast<Index>(traj.first_step + k));
    }
  }
}

}  // namespace mvlq
