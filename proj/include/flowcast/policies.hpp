// SPDX-License-Identifier: Apache-2.0
//
// Measurement-position policies and simulated sensing against a truth field.

#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flowcast/compression.hpp"
#include "flowcast/core.hpp"
#include "flowcast/ensemble.hpp"
#include "flowcast/estimator.hpp"

namespace flowcast {

enum class PolicyKind { uniform, subspace, active };

inline std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::uniform: return "uniform";
    case PolicyKind::subspace: return "subspace";
    case PolicyKind::active: return "active";
  }
  throw ValidationError("unknown policy kind");
}

inline PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "uniform") return PolicyKind::uniform;
  if (name == "subspace") return PolicyKind::subspace;
  if (name == "active") return PolicyKind::active;
  throw ValidationError("unknown policy '" + name +
                        "' (expected uniform, subspace, or active)");
}

struct PolicyConfig {
  PolicyKind kind = PolicyKind::uniform;
  GridSpec candidates{-10.0, 10.0, 13, -10.0, 10.0, 13};
  std::optional<Rect> subspace;  // sampling rectangle for the subspace policy
  uint64_t seed = 0;

  void validate() const {
    if (!candidates.valid() || candidates.size() < 1)
      throw ValidationError("policy candidate grid is empty or invalid");
    if (subspace) {
      const Rect domain = candidates.bounds();
      if (subspace->x0 > subspace->x1 || subspace->y0 > subspace->y1 ||
          subspace->x0 < domain.x0 || subspace->x1 > domain.x1 ||
          subspace->y0 < domain.y0 || subspace->y1 > domain.y1)
        throw ValidationError(
            "subspace rectangle must lie within the candidate grid domain");
    }
  }
};

/// Uncertainty score used by the active and subspace policies.
inline double flow_uncertainty(const EstimatorState& s, const BasisModel& m,
                               const Position& x) {
  const Eigen::Matrix<double, 2, Eigen::Dynamic> h = m.basis_at(x);
  return (h * s.P * h.transpose()).trace();
}

/// Smallest axis-aligned rectangle covering the quarter of candidate points
/// (rounded up) with the highest current flow uncertainty.
inline Rect default_subspace_rect(const EstimatorState& s, const BasisModel& m,
                                  const GridSpec& candidates) {
  if (!candidates.valid() || candidates.size() < 1)
    throw ValidationError("policy candidate grid is empty or invalid");
  const auto points = candidates.points();
  std::vector<double> score(points.size());
  for (size_t i = 0; i < points.size(); ++i)
    score[i] = flow_uncertainty(s, m, points[i]);
  std::vector<size_t> order(points.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t keep = (points.size() + 3) / 4;
  std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                    [&](size_t a, size_t b) {
                      return score[a] > score[b] ||
                             (score[a] == score[b] && a < b);
                    });
  Rect r{points[order[0]].x, points[order[0]].y, points[order[0]].x,
         points[order[0]].y};
  for (size_t i = 1; i < keep; ++i) {
    r.x0 = std::min(r.x0, points[order[i]].x);
    r.x1 = std::max(r.x1, points[order[i]].x);
    r.y0 = std::min(r.y0, points[order[i]].y);
    r.y1 = std::max(r.y1, points[order[i]].y);
  }
  return r;
}

/// uniform: random candidate grid point. subspace: continuous-uniform draw
/// inside the configured rectangle. active: candidate point maximizing
/// trace(H P H^T), ties broken by lowest grid index (no randomness).
inline Position next_measurement_position(const PolicyConfig& p,
                                          const EstimatorState& s,
                                          const BasisModel& m,
                                          std::mt19937_64& rng) {
  p.validate();
  switch (p.kind) {
    case PolicyKind::uniform: {
      std::uniform_int_distribution<int> pick(0, p.candidates.size() - 1);
      return p.candidates.point(pick(rng));
    }
    case PolicyKind::subspace: {
      if (!p.subspace)
        throw ValidationError(
            "subspace policy requires a sampling rectangle (see "
            "default_subspace_rect)");
      std::uniform_real_distribution<double> ux(p.subspace->x0, p.subspace->x1);
      std::uniform_real_distribution<double> uy(p.subspace->y0, p.subspace->y1);
      const double x = ux(rng);
      const double y = uy(rng);
      return {x, y};
    }
    case PolicyKind::active: {
      int best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < p.candidates.size(); ++i) {
        const double score = flow_uncertainty(s, m, p.candidates.point(i));
        if (score > best_score) {
          best_score = score;
          best = i;
        }
      }
      return p.candidates.point(best);
    }
  }
  throw ValidationError("unknown policy kind");
}

/// A field that can be sensed. snap() maps a requested position to where the
/// sensor actually reads (identity for continuous fields).
class TruthField {
 public:
  virtual ~TruthField() = default;
  virtual Position snap(const Position& x) const { return x; }
  virtual FlowVector at(const Position& x) const = 0;
};

class SyntheticTruthField final : public TruthField {
 public:
  explicit SyntheticTruthField(SyntheticTruth truth) : truth_(std::move(truth)) {}
  FlowVector at(const Position& x) const override { return truth_(x); }
  const SyntheticTruth& truth() const { return truth_; }

 private:
  SyntheticTruth truth_;
};

/// Truth known only at a fixed position set (a held-out ensemble member);
/// sensing snaps to the nearest known position, lowest index on ties.
class HoldoutTruthField final : public TruthField {
 public:
  HoldoutTruthField(std::vector<Position> positions, std::vector<FlowVector> flows)
      : positions_(std::move(positions)), flows_(std::move(flows)) {
    if (positions_.empty() || positions_.size() != flows_.size())
      throw ValidationError("holdout truth needs matching positions and flows");
  }

  HoldoutTruthField(const EnsembleForecast& e, const std::string& member_id)
      : HoldoutTruthField(e.positions, e.member(member_id).flows) {}

  Position snap(const Position& x) const override {
    return positions_[nearest(x)];
  }
  FlowVector at(const Position& x) const override { return flows_[nearest(x)]; }

 private:
  size_t nearest(const Position& x) const {
    size_t best = 0;
    double best_d = squared_distance(x, positions_[0]);
    for (size_t i = 1; i < positions_.size(); ++i) {
      const double d = squared_distance(x, positions_[i]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  std::vector<Position> positions_;
  std::vector<FlowVector> flows_;
};

/// Reads the truth at the (possibly snapped) position and adds zero-mean
/// Gaussian noise with covariance sigma_mea. sigma_mea may be singular or
/// zero; the square root clamps negative eigenvalues from rounding.
inline Measurement simulate_measurement(const TruthField& truth, const Position& x,
                                        const Eigen::Matrix2d& sigma_mea,
                                        std::mt19937_64& rng) {
  const Position sensed = truth.snap(x);
  const FlowVector f = truth.at(sensed);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sigma_mea);
  if (es.info() != Eigen::Success)
    throw NumericError("measurement noise eigendecomposition failed");
  const Eigen::Matrix2d root =
      es.eigenvectors() *
      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::normal_distribution<double> normal;
  const double g0 = normal(rng);
  const double g1 = normal(rng);
  const Eigen::Vector2d n = root * Eigen::Vector2d(g0, g1);
  Measurement mea{sensed, {f.u + n(0), f.v + n(1)}, sigma_mea};
  mea.validate();
  return mea;
}

}  // namespace flowcast
