// SPDX-License-Identifier: Apache-2.0
//
// Basic geometry/value types and the error hierarchy shared by all modules.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowcast {

inline constexpr const char* kVersion = "0.1.0";

/// Planar location. The pipeline is unit-agnostic but unit-consistent:
/// positions, length scales and grid extents must share one distance unit.
struct Position {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Position& a, const Position& b) {
    return a.x == b.x && a.y == b.y;
  }
};

/// 2-D flow vector (u east, v north) in flow-speed units.
struct FlowVector {
  double u = 0.0;
  double v = 0.0;

  friend bool operator==(const FlowVector& a, const FlowVector& b) {
    return a.u == b.u && a.v == b.v;
  }
};

inline bool is_finite(const Position& p) {
  return std::isfinite(p.x) && std::isfinite(p.y);
}

inline bool is_finite(const FlowVector& f) {
  return std::isfinite(f.u) && std::isfinite(f.v);
}

inline double squared_distance(const Position& a, const Position& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

inline double distance(const Position& a, const Position& b) {
  return std::sqrt(squared_distance(a, b));
}

/// Axis-aligned rectangle, closed on all sides.
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool contains(const Position& p) const {
    return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
  }
};

/// Rectangular evaluation grid. Point index runs x-fastest:
/// index = iy * nx + ix.
struct GridSpec {
  double x0 = 0.0;
  double x1 = 0.0;
  int nx = 1;
  double y0 = 0.0;
  double y1 = 0.0;
  int ny = 1;

  int size() const { return nx * ny; }

  double step_x() const { return nx > 1 ? (x1 - x0) / (nx - 1) : 0.0; }
  double step_y() const { return ny > 1 ? (y1 - y0) / (ny - 1) : 0.0; }

  Position point(int index) const {
    const int ix = index % nx;
    const int iy = index / nx;
    return {x0 + ix * step_x(), y0 + iy * step_y()};
  }

  std::vector<Position> points() const {
    std::vector<Position> out;
    out.reserve(static_cast<size_t>(size()));
    for (int i = 0; i < size(); ++i) out.push_back(point(i));
    return out;
  }

  Rect bounds() const { return {x0, y0, x1, y1}; }

  bool valid() const {
    return nx >= 1 && ny >= 1 && x1 >= x0 && y1 >= y0 &&
           std::isfinite(x0) && std::isfinite(x1) && std::isfinite(y0) &&
           std::isfinite(y1);
  }
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV/JSON); carries a 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1)
      : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Structurally well-formed but semantically invalid data or arguments.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (non-finite input, factorization breakdown, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Gram factorization failed even after jitter escalation.
class IllConditionedError : public NumericError {
 public:
  IllConditionedError(const std::string& what, double condition_estimate)
      : NumericError(what + " (condition estimate " +
                     std::to_string(condition_estimate) + ")"),
        condition_(condition_estimate) {}
  double condition_estimate() const { return condition_; }

 private:
  double condition_;
};

/// Innovation covariance singular: zero measurement noise against a fully
/// confident prior.
class DegenerateInnovationError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Batch system has no unique solution (rank-deficient without a prior).
class UnderdeterminedError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowcast
