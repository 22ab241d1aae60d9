// SPDX-License-Identifier: Apache-2.0
//
// Online estimation of the reduced weight vector w: a constant-time Kalman
// update per flow measurement, plus an independent batch least-squares route
// over the accumulated measurement set for cross-checking.

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "flowcast/compression.hpp"
#include "flowcast/core.hpp"

namespace flowcast {

struct Measurement {
  Position position;
  FlowVector flow;
  Eigen::Matrix2d noise = Eigen::Matrix2d::Identity();  // Sigma_mea

  void validate() const {
    if (!is_finite(position) || !is_finite(flow))
      throw ValidationError("measurement contains non-finite values");
    const double scale = noise(0, 0) + noise(1, 1);
    if (!noise.allFinite() || noise(0, 1) != noise(1, 0) ||
        noise(0, 0) < 0.0 || noise(1, 1) < 0.0 ||
        noise.determinant() < -1e-15 * scale * scale)
      throw ValidationError(
          "measurement noise must be a symmetric positive-semidefinite 2x2 "
          "matrix");
  }
};

struct EstimatorState {
  Eigen::VectorXd w;  // weight mean, length N_W
  Eigen::MatrixXd P;  // weight covariance, N_W x N_W
  long k = 0;         // measurements absorbed

  int n_modes() const { return static_cast<int>(w.size()); }

  void validate() const {
    if (w.size() < 1) throw ValidationError("estimator state is empty");
    if (P.rows() != w.size() || P.cols() != w.size())
      throw ValidationError("estimator covariance shape mismatch");
    if (!w.allFinite() || !P.allFinite())
      throw ValidationError("estimator state contains non-finite values");
    if ((P - P.transpose()).lpNorm<Eigen::Infinity>() >
        1e-9 * (1.0 + P.lpNorm<Eigen::Infinity>()))
      throw ValidationError("estimator covariance is not symmetric");
  }
};

struct EstimatorOptions {
  // Per-step process noise Q = process_noise * I applied before each update;
  // zero models a stationary field over the estimation horizon.
  double process_noise = 0.0;
};

/// Weight statistics across the ensemble: mean per mode and independent
/// per-mode sample variances (members are the samples, N_E - 1 denominator).
inline EstimatorState init_from_ensemble(const BasisModel& model) {
  model.validate();
  if (model.n_members() < 2)
    throw ValidationError(
        "weight prior requires at least two ensemble members (N_E >= 2)");
  EstimatorState s;
  s.w = model.weights.rowwise().mean();
  Eigen::VectorXd var(model.n_modes());
  for (int r = 0; r < model.n_modes(); ++r)
    var(r) = (model.weights.row(r).array() - s.w(r)).square().sum() /
             (model.n_members() - 1);
  s.P = var.asDiagonal();
  s.k = 0;
  return s;
}

/// One Kalman step with H = basis_at(position), identity transition, and the
/// Joseph covariance form (keeps P symmetric positive semidefinite even after
/// many aggressive updates). A numerically singular innovation covariance is
/// retried once with a trace-relative jitter, then rejected.
inline void update(EstimatorState& state, const BasisModel& model,
                   const Measurement& mea,
                   const EstimatorOptions& opts = {}) {
  state.validate();
  mea.validate();
  if (state.n_modes() != model.n_modes())
    throw ValidationError("estimator state does not match basis model rank");
  if (opts.process_noise < 0.0)
    throw ValidationError("process noise must be non-negative");

  if (opts.process_noise > 0.0)
    state.P.diagonal().array() += opts.process_noise;

  const Eigen::Matrix<double, 2, Eigen::Dynamic> h = model.basis_at(mea.position);
  const Eigen::Vector2d innovation =
      Eigen::Vector2d(mea.flow.u, mea.flow.v) - h * state.w;

  Eigen::Matrix2d s = h * state.P * h.transpose() + mea.noise;
  s = 0.5 * (s + s.transpose());
  Eigen::LLT<Eigen::Matrix2d> llt(s);
  if (llt.info() != Eigen::Success) {
    s.diagonal().array() += 1e-12 * s.trace();
    llt.compute(s);
    if (llt.info() != Eigen::Success)
      throw DegenerateInnovationError(
          "innovation covariance is numerically singular");
  }

  const Eigen::MatrixXd gain = llt.solve(h * state.P).transpose();  // N_W x 2
  state.w += gain * innovation;
  const Eigen::MatrixXd ikh =
      Eigen::MatrixXd::Identity(state.n_modes(), state.n_modes()) - gain * h;
  state.P = ikh * state.P * ikh.transpose() +
            gain * mea.noise * gain.transpose();
  state.P = 0.5 * (state.P + state.P.transpose());
  ++state.k;
}

struct FlowEstimate {
  FlowVector mean;
  Eigen::Matrix2d covariance;
};

/// Posterior flow at an arbitrary query point: mean H(x) w, covariance
/// H(x) P H(x)^T.
inline FlowEstimate query(const EstimatorState& state, const BasisModel& model,
                          const Position& x) {
  state.validate();
  if (state.n_modes() != model.n_modes())
    throw ValidationError("estimator state does not match basis model rank");
  const Eigen::Matrix<double, 2, Eigen::Dynamic> h = model.basis_at(x);
  const Eigen::Vector2d mean = h * state.w;
  Eigen::Matrix2d cov = h * state.P * h.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return {{mean(0), mean(1)}, cov};
}

struct WeightPrior {
  Eigen::VectorXd w0;
  Eigen::MatrixXd P0;
};

/// Batch least squares over the whole measurement set, solved in information
/// form: Lambda = P0^{-1} + sum_i H_i^T R_i^{-1} H_i. This is an independent
/// route to the same posterior as the sequential Kalman recursion and is used
/// to cross-check it. Without a prior the problem must be overdetermined;
/// a rank-deficient normal matrix raises UnderdeterminedError.
inline EstimatorState batch_ls(const BasisModel& model,
                               std::span<const Measurement> measurements,
                               const std::optional<WeightPrior>& prior = {}) {
  model.validate();
  const int n = model.n_modes();
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);

  if (prior) {
    if (prior->w0.size() != n || prior->P0.rows() != n || prior->P0.cols() != n)
      throw ValidationError("weight prior shape does not match basis rank");
    Eigen::LLT<Eigen::MatrixXd> llt(prior->P0);
    if (llt.info() != Eigen::Success)
      throw ValidationError("weight prior covariance must be positive definite");
    lambda = llt.solve(Eigen::MatrixXd::Identity(n, n));
    rhs = lambda * prior->w0;
  }

  for (const auto& mea : measurements) {
    mea.validate();
    if (mea.noise.determinant() <= 0.0)
      throw ValidationError(
          "noise-weighted least squares requires invertible measurement noise");
    const Eigen::Matrix<double, 2, Eigen::Dynamic> h = model.basis_at(mea.position);
    const Eigen::Matrix2d r_inv = mea.noise.inverse();
    lambda += h.transpose() * r_inv * h;
    rhs += h.transpose() * r_inv * Eigen::Vector2d(mea.flow.u, mea.flow.v);
  }

  lambda = 0.5 * (lambda + lambda.transpose());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(lambda);
  const double dmin = ldlt.vectorD().minCoeff();
  const double dmax = ldlt.vectorD().maxCoeff();
  if (ldlt.info() != Eigen::Success || dmin <= 1e-12 * std::max(dmax, 1.0)) {
    if (!prior)
      throw UnderdeterminedError(
          "least squares without a prior needs measurements spanning all " +
          std::to_string(n) + " modes");
    throw NumericError("least-squares normal matrix is numerically singular");
  }

  EstimatorState s;
  s.w = ldlt.solve(rhs);
  s.P = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
  s.P = 0.5 * (s.P + s.P.transpose());
  s.k = static_cast<long>(measurements.size());
  s.validate();
  return s;
}

inline nlohmann::ordered_json state_to_json(const EstimatorState& s) {
  s.validate();
  nlohmann::ordered_json j;
  j["w"] = std::vector<double>(s.w.data(), s.w.data() + s.w.size());
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < s.P.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < s.P.cols(); ++c) row.push_back(s.P(r, c));
    rows.push_back(std::move(row));
  }
  j["P"] = std::move(rows);
  j["k"] = s.k;
  return j;
}

inline EstimatorState state_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object() || !j.contains("w") || !j.contains("P") || !j.contains("k"))
    throw ParseError("estimator state JSON must contain 'w', 'P', and 'k'");
  EstimatorState s;
  const auto& w = j.at("w");
  if (!w.is_array() || w.empty()) throw ParseError("'w' must be a non-empty array");
  s.w.resize(static_cast<Eigen::Index>(w.size()));
  for (size_t i = 0; i < w.size(); ++i) {
    if (!w[i].is_number()) throw ParseError("'w' must contain numbers");
    s.w(static_cast<Eigen::Index>(i)) = w[i].get<double>();
  }
  const auto& p = j.at("P");
  if (!p.is_array() || p.size() != w.size())
    throw ParseError("'P' must be a square matrix matching 'w'");
  s.P.resize(s.w.size(), s.w.size());
  for (size_t r = 0; r < p.size(); ++r) {
    if (!p[r].is_array() || p[r].size() != w.size())
      throw ParseError("'P' must be a square matrix matching 'w'");
    for (size_t c = 0; c < p[r].size(); ++c) {
      if (!p[r][c].is_number()) throw ParseError("'P' must contain numbers");
      s.P(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          p[r][c].get<double>();
    }
  }
  if (!j.at("k").is_number_integer()) throw ParseError("'k' must be an integer");
  s.k = j.at("k").get<long>();
  s.validate();
  return s;
}

}  // namespace flowcast
