/**
 * @file io.hpp
 * @brief Flat `key = value` model and parameter files.
 *
 * Matrices are row-major, rows separated by `;`, entries by `,`:
 *
 *   d = 2
 *   m = 1
 *   T = 1
 *   B = -1, 0.5; 0, -2
 *   C = 1; 0
 *
 * Blocks that are not given default to zero. `#` starts a comment.
 */

#pragma once

#include "mvlq/core.hpp"
#include "mvlq/lq_model.hpp"
#include "mvlq/measure.hpp"
#include "mvlq/riccati.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace mvlq {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  return parse_key_values(in);
}

/// "a, b; c, d" -> 2x2 matrix. All rows must have the same width.
inline Matrix parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::string_view rest(text);
  while (true) {
    const auto semi = rest.find(';');
    std::string_view row = rest.substr(0, semi);
    std::vector<double> vals;
    while (true) {
      const auto comma = row.find(',');
      vals.push_back(parse_double(row.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      row.remove_prefix(comma + 1);
    }
    if (!rows.empty() && vals.size() != rows.front().size()) throw ConfigError("ragged matrix: '" + text + "'");
    rows.push_back(std::move(vals));
    if (semi == std::string_view::npos) break;
    rest.remove_prefix(semi + 1);
  }
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline std::string format_matrix(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    if (i) out += "; ";
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ", ";
      out += format_double(m(i, j));
    }
  }
  return out;
}

struct LqProblem {
  LqDynamics dyn;
  LqCost cost;
  double T = 1.0;
};

namespace detail {

inline Matrix matrix_or_zero(const KeyValues& kv, const std::string& key, Index rows, Index cols) {
  const auto it = kv.find(key);
  if (it == kv.end()) return Matrix::Zero(rows, cols);
  Matrix m = parse_matrix(it->second);
  // Vectors may be written as a row or a column.
  if (cols == 1 && m.rows() == 1 && m.cols() == rows) m.transposeInPlace();
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError("model key '" + key + "': expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  return m;
}

inline long parse_dim(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("model file: missing '" + key + "'");
  const double v = parse_double(it->second);
  if (v < 1 || v != std::floor(v)) throw ConfigError("model file: '" + key + "' must be a positive integer");
  return static_cast<long>(v);
}

}  // namespace detail

inline const std::set<std::string>& model_keys() {
  static const std::set<std::string> keys = {"d",  "m",     "T",  "b0",     "B",  "Bbar",  "C",
                                             "theta", "D",  "Dbar", "F",  "theta0", "D0", "D0bar",
                                             "F0", "Q2", "Q2bar", "R2", "P2",     "P2bar", "M2"};
  return keys;
}

inline LqProblem parse_model(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (!model_keys().count(key)) throw ConfigError("model file: unknown key '" + key + "'");
  }
  const Index d = detail::parse_dim(kv, "d");
  const Index m = detail::parse_dim(kv, "m");
  LqDynamics dyn;
  dyn.b0 = detail::matrix_or_zero(kv, "b0", d, 1);
  dyn.B = detail::matrix_or_zero(kv, "B", d, d);
  dyn.Bbar = detail::matrix_or_zero(kv, "Bbar", d, d);
  dyn.C = detail::matrix_or_zero(kv, "C", d, m);
  dyn.theta = detail::matrix_or_zero(kv, "theta", d, 1);
  dyn.D = detail::matrix_or_zero(kv, "D", d, d);
  dyn.Dbar = detail::matrix_or_zero(kv, "Dbar", d, d);
  dyn.F = detail::matrix_or_zero(kv, "F", d, m);
  dyn.theta0 = detail::matrix_or_zero(kv, "theta0", d, 1);
  dyn.D0 = detail::matrix_or_zero(kv, "D0", d, d);
  dyn.D0bar = detail::matrix_or_zero(kv, "D0bar", d, d);
  dyn.F0 = detail::matrix_or_zero(kv, "F0", d, m);
  LqCost cost(detail::matrix_or_zero(kv, "Q2", d, d), detail::matrix_or_zero(kv, "Q2bar", d, d),
              detail::matrix_or_zero(kv, "R2", m, m), detail::matrix_or_zero(kv, "P2", d, d),
              detail::matrix_or_zero(kv, "P2bar", d, d), detail::matrix_or_zero(kv, "M2", d, m));
  double T = 1.0;
  if (const auto it = kv.find("T"); it != kv.end()) T = parse_double(it->second);
  if (!(T > 0.0)) throw ConfigError("model file: T must be > 0");
  try {
    check_compatible(dyn, cost);
  } catch (const Error& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
  return {std::move(dyn), std::move(cost), T};
}

inline LqProblem read_model(const std::string& path) { return parse_model(read_key_values(path)); }

inline void write_model(std::ostream& os, const LqProblem& p) {
  const LqDynamics& dyn = p.dyn;
  os << "d = " << dyn.state_dim() << '\n' << "m = " << dyn.control_dim() << '\n';
  os << "T = " << format_double(p.T) << '\n';
  const std::pair<const char*, Matrix> blocks[] = {
      {"b0", dyn.b0.transpose()},         {"B", dyn.B},          {"Bbar", dyn.Bbar},   {"C", dyn.C},
      {"theta", dyn.theta.transpose()},   {"D", dyn.D},          {"Dbar", dyn.Dbar},   {"F", dyn.F},
      {"theta0", dyn.theta0.transpose()}, {"D0", dyn.D0},        {"D0bar", dyn.D0bar}, {"F0", dyn.F0},
      {"Q2", p.cost.Q2()},    {"Q2bar", p.cost.Q2bar()}, {"R2", p.cost.R2()}, {"P2", p.cost.P2()},
      {"P2bar", p.cost.P2bar()}, {"M2", p.cost.M2()}};
  for (const auto& [name, m] : blocks) os << name << " = " << format_matrix(m) << '\n';
}

/// Interbank parameters from keys kappa, q, eta, c, sigma0, sigma1, rho, T, x0 (missing keys keep defaults).
inline SystemicRiskParams parse_systemic_risk_params(const KeyValues& kv, SystemicRiskParams p = {}) {
  const std::map<std::string, double*> fields = {{"kappa", &p.kappa}, {"q", &p.q},           {"eta", &p.eta},
                                                 {"c", &p.c},         {"sigma0", &p.sigma0}, {"sigma1", &p.sigma1},
                                                 {"rho", &p.rho},     {"T", &p.T},           {"x0", &p.x0}};
  for (const auto& [key, value] : kv) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("parameter file: unknown key '" + key + "'");
    *it->second = parse_double(value);
  }
  return p;
}

}  // namespace mvlq
