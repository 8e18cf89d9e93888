/**
 * @file measure.hpp
 * @brief Equal-weight empirical measures on R^d and the functionals the
 *        linear-quadratic theory is written in (mean, quadratic moments,
 *        variance forms, affine pushforwards, 1D Wasserstein-2).
 */

#pragma once

#include "mvlq/core.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mvlq {

/**
 * Particle cloud with equal weights 1/N. Points are stored column-wise in a
 * d x N matrix. Immutable after construction; N >= 1 and all coordinates are
 * finite.
 */
class EmpiricalMeasure {
 public:
  explicit EmpiricalMeasure(Matrix points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw DomainError("EmpiricalMeasure: dimension must be >= 1");
    if (points_.cols() < 1) throw DomainError("EmpiricalMeasure: needs at least one particle");
    if (!points_.allFinite()) throw DomainError("EmpiricalMeasure: non-finite coordinate");
  }

  static EmpiricalMeasure from_points(const std::vector<Vector>& pts) {
    if (pts.empty()) throw DomainError("EmpiricalMeasure: needs at least one particle");
    Matrix m(pts.front().size(), static_cast<Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      require_same_dim(pts[i].size(), m.rows(), "EmpiricalMeasure::from_points");
      m.col(static_cast<Index>(i)) = pts[i];
    }
    return EmpiricalMeasure(std::move(m));
  }

  /// One-dimensional cloud from scalars.
  static EmpiricalMeasure from_scalars(std::span<const double> xs) {
    Matrix m(1, static_cast<Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) m(0, static_cast<Index>(i)) = xs[i];
    return EmpiricalMeasure(std::move(m));
  }

  static EmpiricalMeasure from_scalars(std::initializer_list<double> xs) {
    return from_scalars(std::span<const double>(xs.begin(), xs.size()));
  }

  static EmpiricalMeasure point_mass(const Vector& x, Index n = 1) {
    Matrix m(x.size(), n);
    m.colwise() = x;
    return EmpiricalMeasure(std::move(m));
  }

  Index dim() const noexcept { return points_.rows(); }
  Index size() const noexcept { return points_.cols(); }
  const Matrix& points() const noexcept { return points_; }
  auto point(Index i) const { return points_.col(i); }

 private:
  Matrix points_;
};

/// Affine map x -> K x + k from R^d to R^m.
struct AffineMap {
  Matrix K;
  Vector k;

  static AffineMap constant(Index d, const Vector& c) { return {Matrix::Zero(c.size(), d), c}; }
  static AffineMap identity(Index d) { return {Matrix::Identity(d, d), Vector::Zero(d)}; }

  Index in_dim() const noexcept { return K.cols(); }
  Index out_dim() const noexcept { return K.rows(); }

  Vector operator()(const Vector& x) const { return K * x + k; }

  /// Image of every column of a d x N matrix.
  Matrix apply(const Matrix& xs) const {
    Matrix out = K * xs;
    out.colwise() += k;
    return out;
  }
};

/// Per-coordinate pairwise mean of the columns of a d x N matrix.
inline Vector column_mean(const Matrix& xs) {
  const auto n = static_cast<std::size_t>(xs.cols());
  Vector out(xs.rows());
  for (Index r = 0; r < xs.rows(); ++r) {
    out(r) = pairwise_sum(n, [&](std::size_t i) { return xs(r, static_cast<Index>(i)); }) /
             static_cast<double>(n);
  }
  return out;
}

/// Pairwise average of a per-particle scalar.
template <class Term>
double particle_average(Index n, const Term& term) {
  return pairwise_sum(static_cast<std::size_t>(n),
                      [&](std::size_t i) { return term(static_cast<Index>(i)); }) /
         static_cast<double>(n);
}

inline Vector mean(const EmpiricalMeasure& mu) { return column_mean(mu.points()); }

/// (1/N) sum_i x_i^T L x_i.
inline double quad_moment(const EmpiricalMeasure& mu, const Matrix& L) {
  require_square(L, mu.dim(), "quad_moment");
  const Matrix& x = mu.points();
  const Matrix lx = L * x;
  return particle_average(mu.size(), [&](Index i) { return x.col(i).dot(lx.col(i)); });
}

/// quad_moment(mu, L) - mean^T L mean.
inline double variance_form(const EmpiricalMeasure& mu, const Matrix& L) {
  const double second = quad_moment(mu, L);
  const Vector m = mean(mu);
  return second - m.dot(L * m);
}

inline EmpiricalMeasure pushforward(const EmpiricalMeasure& mu, const AffineMap& a) {
  require_same_dim(a.in_dim(), mu.dim(), "pushforward");
  require_same_dim(a.k.size(), a.out_dim(), "pushforward");
  return EmpiricalMeasure(a.apply(mu.points()));
}

inline EmpiricalMeasure translate(const EmpiricalMeasure& mu, const Vector& c) {
  require_same_dim(c.size(), mu.dim(), "translate");
  Matrix p = mu.points();
  p.colwise() += c;
  return EmpiricalMeasure(std::move(p));
}

inline double l2_norm(const EmpiricalMeasure& mu) {
  const Matrix& x = mu.points();
  return std::sqrt(particle_average(mu.size(), [&](Index i) { return x.col(i).squaredNorm(); }));
}

/**
 * Exact W2 between two equal-size one-dimensional clouds: the sorted coupling
 * is optimal in 1D.
 */
inline double w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != 1 || nu.dim() != 1) throw DomainError("w2_1d: only one-dimensional measures");
  if (mu.size() != nu.size()) throw DimensionMismatch("w2_1d: particle counts differ");
  std::vector<double> a(mu.points().data(), mu.points().data() + mu.size());
  std::vector<double> b(nu.points().data(), nu.points().data() + nu.size());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double ms = particle_average(mu.size(), [&](Index i) {
    const double diff = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
    return diff * diff;
  });
  return std::sqrt(ms);
}

// ---------------------------------------------------------------------------
// CSV: header x0,...,x{d-1}; one row per particle.

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline void write_measure_csv(std::ostream& os, const EmpiricalMeasure& mu) {
  for (Index j = 0; j < mu.dim(); ++j) os << (j ? "," : "") << 'x' << j;
  os << '\n';
  for (Index i = 0; i < mu.size(); ++i) {
    for (Index j = 0; j < mu.dim(); ++j) os << (j ? "," : "") << format_double(mu.points()(j, i));
    os << '\n';
  }
}

inline EmpiricalMeasure read_measure_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("particle CSV: missing header");
  const auto d = static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::string_view rest(line);
    Index cols = 0;
    while (true) {
      const auto comma = rest.find(',');
      values.push_back(parse_double(rest.substr(0, comma)));
      ++cols;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cols != d) throw ConfigError("particle CSV: row " + std::to_string(rows + 1) + " has wrong width");
    ++rows;
  }
  if (rows == 0) throw ConfigError("particle CSV: no particles");
  Matrix m(d, static_cast<Index>(rows));
  for (std::size_t i = 0; i < rows; ++i)
    for (Index j = 0; j < d; ++j) m(j, static_cast<Index>(i)) = values[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
  return EmpiricalMeasure(std::move(m));
}

inline EmpiricalMeasure read_measure_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open particle file: " + path);
  return read_measure_csv(in);
}

}  // namespace mvlq
