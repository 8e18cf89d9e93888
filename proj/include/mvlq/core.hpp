/**
 * @file core.hpp
 * @brief Shared types, error classes and deterministic reductions.
 */

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mvlq {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// U or V lost positive definiteness; carries the offending time and eigenvalue.
class NonPositiveGain : public Error {
 public:
  NonPositiveGain(double t, double min_eigenvalue)
      : Error(describe(t, min_eigenvalue)), t_(t), min_eigenvalue_(min_eigenvalue) {}

  double time() const noexcept { return t_; }
  double min_eigenvalue() const noexcept { return min_eigenvalue_; }

 private:
  static std::string describe(double t, double eig) {
    std::ostringstream os;
    os.precision(17);
    os << "gain matrix not positive definite at t=" << t << " (min eigenvalue " << eig << ")";
    return os.str();
  }

  double t_;
  double min_eigenvalue_;
};

class NumericalBlowup : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Entries above this magnitude are treated as a blowup.
inline constexpr double kBlowupThreshold = 1e12;

/// Minimum eigenvalue accepted for U and V.
inline constexpr double kPdThreshold = 1e-10;

namespace detail {

inline constexpr std::size_t kPairwiseLeaf = 32;

template <class Term>
double pairwise_sum_range(std::size_t lo, std::size_t hi, const Term& term) {
  if (hi - lo <= kPairwiseLeaf) {
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += term(i);
    return acc;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum_range(lo, mid, term) + pairwise_sum_range(mid, hi, term);
}

}  // namespace detail

/**
 * Sum term(0) + ... + term(n-1) over an index-ascending binary tree with
 * sequential leaves of at most 32 terms. The association order depends on n
 * only, so results are bit-reproducible.
 */
template <class Term>
double pairwise_sum(std::size_t n, const Term& term) {
  return detail::pairwise_sum_range(0, n, term);
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline bool exceeds_blowup(const Matrix& m) {
  const double* p = m.data();
  bool bad = false;
  for (Index i = 0; i < m.size(); ++i) bad |= !(std::abs(p[i]) <= kBlowupThreshold);
  return bad;
}

// Column kernels for particle clouds (few rows, many columns). Plain loops beat
// Eigen's dynamic-size product dispatch at these shapes.

/// out(:, i) (+)= K X(:, i) for every column i.
inline void apply_columns(const Matrix& K, const Matrix& X, Matrix& out, bool accumulate) {
  const Index r = K.rows(), c = K.cols(), n = X.cols();
  if (!accumulate) out.setZero(r, n);
  const double* k = K.data();
  const double* x = X.data();
  double* o = out.data();
  for (Index i = 0; i < n; ++i) {
    const double* xi = x + i * c;
    double* oi = o + i * r;
    for (Index j = 0; j < c; ++j) {
      const double xj = xi[j];
      const double* kj = k + j * r;
      for (Index a = 0; a < r; ++a) oi[a] += kj[a] * xj;
    }
  }
}

/// out(i) += scale * X(:, i)' Q Y(:, i) for every column i.
inline void bilinear_columns(const Matrix& Q, const Matrix& X, const Matrix& Y, double scale, Vector& out) {
  const Index r = Q.rows(), c = Q.cols(), n = X.cols();
  const double* q = Q.data();
  for (Index i = 0; i < n; ++i) {
    const double* xi = X.data() + i * r;
    const double* yi = Y.data() + i * c;
    double acc = 0.0;
    for (Index j = 0; j < c; ++j) {
      double row = 0.0;
      const double* qj = q + j * r;
      for (Index a = 0; a < r; ++a) row += xi[a] * qj[a];
      acc += row * yi[j];
    }
    out(i) += scale * acc;
  }
}

inline void require_same_dim(Index a, Index b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << a << " vs " << b << ")";
    throw DimensionMismatch(os.str());
  }
}

inline void require_square(const Matrix& m, Index n, const char* what) {
  if (m.rows() != n || m.cols() != n) {
    std::ostringstream os;
    os << what << ": expected " << n << "x" << n << " matrix, got " << m.rows() << "x" << m.cols();
    throw DimensionMismatch(os.str());
  }
}

inline void require_shape(const Matrix& m, Index rows, Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << what << ": expected " << rows << "x" << cols << " matrix, got " << m.rows() << "x"
       << m.cols();
    throw DimensionMismatch(os.str());
  }
}

}  // namespace mvlq
