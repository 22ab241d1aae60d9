// SPDX-License-Identifier: Apache-2.0
//
// Reference estimators sharing the incompressible kernel: a Kalman observer
// over the full latent vector, a lazy Gaussian-process regressor over the
// accumulated measurement set, and a batch least-squares re-solver. All three
// produce divergence-free mean fields; they differ in state size and cost.

#pragma once

#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flowcast/compression.hpp"
#include "flowcast/core.hpp"
#include "flowcast/ensemble.hpp"
#include "flowcast/estimator.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/regression.hpp"

namespace flowcast {

/// Kalman filter over the full latent vector beta (dimension 2N_V), observed
/// through the kernel row-block K(x, X_ens). Initial covariance keeps only
/// the per-coefficient sample variances of the latent ensemble matrix; the
/// cross terms are discarded.
struct KernelObserver {
  std::vector<Position> positions;  // X_ens
  KernelConfig kernel;
  Eigen::VectorXd beta;  // latent mean, length 2N_V
  Eigen::MatrixXd P;     // latent covariance, 2N_V x 2N_V
  long k = 0;

  int dimension() const { return static_cast<int>(beta.size()); }

  static KernelObserver init(const LatentMatrix& latents,
                             std::span<const Position> positions,
                             const KernelConfig& cfg) {
    cfg.validate();
    if (latents.B.rows() != 2 * static_cast<Eigen::Index>(positions.size()))
      throw ValidationError("latent matrix rows do not match 2N_V");
    if (latents.B.cols() < 2)
      throw ValidationError(
          "latent variance requires at least two ensemble members (N_E >= 2)");
    KernelObserver m;
    m.positions.assign(positions.begin(), positions.end());
    m.kernel = cfg;
    m.beta = latents.B.rowwise().mean();
    Eigen::VectorXd var(latents.B.rows());
    for (Eigen::Index r = 0; r < latents.B.rows(); ++r)
      var(r) = (latents.B.row(r).array() - m.beta(r)).square().sum() /
               (latents.B.cols() - 1);
    m.P = var.asDiagonal();
    return m;
  }

  void update(const Measurement& mea) {
    mea.validate();
    const Eigen::Matrix<double, 2, Eigen::Dynamic> h =
        cross_gram(mea.position, std::span(positions), kernel);
    const Eigen::Vector2d innovation =
        Eigen::Vector2d(mea.flow.u, mea.flow.v) - h * beta;

    Eigen::Matrix2d s = h * P * h.transpose() + mea.noise;
    s = 0.5 * (s + s.transpose());
    Eigen::LLT<Eigen::Matrix2d> llt(s);
    if (llt.info() != Eigen::Success) {
      s.diagonal().array() += 1e-12 * s.trace();
      llt.compute(s);
      if (llt.info() != Eigen::Success)
        throw DegenerateInnovationError(
            "innovation covariance is numerically singular");
    }

    const Eigen::MatrixXd gain = llt.solve(h * P).transpose();  // 2N_V x 2
    beta += gain * innovation;
    const Eigen::MatrixXd ikh =
        Eigen::MatrixXd::Identity(dimension(), dimension()) - gain * h;
    P = ikh * P * ikh.transpose() + gain * mea.noise * gain.transpose();
    P = 0.5 * (P + P.transpose());
    ++k;
  }

  FlowEstimate estimate(const Position& x) const {
    const Eigen::Matrix<double, 2, Eigen::Dynamic> h =
        cross_gram(x, std::span(positions), kernel);
    const Eigen::Vector2d mean = h * beta;
    Eigen::Matrix2d cov = h * P * h.transpose();
    cov = 0.5 * (cov + cov.transpose());
    return {{mean(0), mean(1)}, cov};
  }
};

/// Gaussian-process regression over all accumulated flow measurements with
/// per-point noise. The ensemble enters as N_V pseudo-measurements (position
/// mean with the 2x2 sample covariance as noise), inserted exactly once at
/// construction. Updates only append; every estimate factorizes the current
/// Gram system from scratch, so query cost grows with the measurement count.
class IncompressibleGP {
 public:
  IncompressibleGP(const EnsembleForecast& ensemble, const KernelConfig& cfg)
      : cfg_(cfg) {
    cfg_.validate();
    const EnsembleStats stats = aggregate_statistics(ensemble);
    positions_ = ensemble.positions;
    values_ = stats.mean;
    noises_ = stats.covariance;
    n_prior_ = static_cast<int>(positions_.size());
  }

  /// Constant-time bookkeeping: stores the measurement, does no solver work.
  void add_measurement(const Measurement& mea) {
    mea.validate();
    positions_.push_back(mea.position);
    values_.push_back(mea.flow);
    noises_.push_back(mea.noise);
  }

  int n_measurements() const { return static_cast<int>(positions_.size()); }
  int n_collected() const { return n_measurements() - n_prior_; }
  long factorization_count() const { return factorizations_; }

  FlowEstimate estimate(const Position& x) const {
    const Factorization f = factorize();
    return estimate_with(f, x);
  }

  /// Shares one factorization across many query points; the posterior at each
  /// point is identical to estimate().
  std::vector<FlowEstimate> estimate_many(std::span<const Position> query) const {
    const Factorization f = factorize();
    std::vector<FlowEstimate> out;
    out.reserve(query.size());
    for (const auto& x : query) out.push_back(estimate_with(f, x));
    return out;
  }

 private:
  struct Factorization {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd alpha;  // (K + R)^{-1} z
  };

  Factorization factorize() const {
    Eigen::MatrixXd a = gram(std::span(positions_), std::span(positions_), cfg_);
    for (size_t i = 0; i < noises_.size(); ++i)
      a.block<2, 2>(2 * i, 2 * i) += noises_[i];

    const double base =
        1e-12 * cfg_.signal_scale * cfg_.signal_scale /
        (cfg_.length_scale * cfg_.length_scale);
    double ridge = cfg_.ridge();
    Factorization f;
    for (int attempt = 0;; ++attempt) {
      Eigen::MatrixXd regularized = a;
      regularized.diagonal().array() += ridge;
      f.llt.compute(regularized);
      if (f.llt.info() == Eigen::Success &&
          f.llt.matrixLLT().diagonal().minCoeff() > 0.0)
        break;
      if (attempt >= 4)
        throw IllConditionedError(
            "measurement Gram factorization failed after ridge escalation", 0.0);
      ridge = ridge > 0.0 ? 10.0 * ridge : base;
      std::cerr << "flowcast: escalating measurement Gram ridge to "
                << detail::format_double(ridge) << "\n";
    }
    ++factorizations_;
    f.alpha = f.llt.solve(vectorize(values_));
    return f;
  }

  FlowEstimate estimate_with(const Factorization& f, const Position& x) const {
    const Eigen::Matrix<double, 2, Eigen::Dynamic> kx =
        cross_gram(x, std::span(positions_), cfg_);
    const Eigen::Vector2d mean = kx * f.alpha;
    Eigen::Matrix2d cov =
        incompressible_kernel(x, x, cfg_) - kx * f.llt.solve(kx.transpose());
    cov = 0.5 * (cov + cov.transpose());
    return {{mean(0), mean(1)}, cov};
  }

  std::vector<Position> positions_;
  std::vector<FlowVector> values_;
  std::vector<Eigen::Matrix2d> noises_;
  int n_prior_ = 0;
  KernelConfig cfg_;
  mutable long factorizations_ = 0;
};

/// Re-solves the weighted least-squares problem over the entire measurement
/// history on every update, caching only the basis blocks H_i. Solve cost per
/// update grows linearly with the measurement count; the posterior matches
/// batch_ls over the same set. Without a prior the state stays unset until
/// the accumulated measurements span all modes; state() reports that.
class LeastSquaresEstimator {
 public:
  explicit LeastSquaresEstimator(BasisModel model,
                                 std::optional<WeightPrior> prior = {})
      : model_(std::move(model)), prior_(std::move(prior)) {
    model_.validate();
    const int n = model_.n_modes();
    if (prior_) {
      if (prior_->w0.size() != n || prior_->P0.rows() != n ||
          prior_->P0.cols() != n)
        throw ValidationError("weight prior shape does not match basis rank");
      state_ = EstimatorState{prior_->w0, prior_->P0, 0};
    }
  }

  long n_measurements() const { return static_cast<long>(measurements_.size()); }

  void update(const Measurement& mea) {
    mea.validate();
    if (mea.noise.determinant() <= 0.0)
      throw ValidationError(
          "noise-weighted least squares requires invertible measurement noise");
    blocks_.push_back(model_.basis_at(mea.position));
    measurements_.push_back(mea);
    resolve();
  }

  const EstimatorState& state() const {
    if (!state_)
      throw UnderdeterminedError(
          "least-squares estimator has no prior and no solved state yet");
    return *state_;
  }

  FlowEstimate estimate(const Position& x) const {
    return query(state(), model_, x);
  }

  const BasisModel& model() const { return model_; }

 private:
  void resolve() {
    const int n = model_.n_modes();
    Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    if (prior_) {
      Eigen::LLT<Eigen::MatrixXd> llt(prior_->P0);
      if (llt.info() != Eigen::Success)
        throw ValidationError("weight prior covariance must be positive definite");
      lambda = llt.solve(Eigen::MatrixXd::Identity(n, n));
      rhs = lambda * prior_->w0;
    }
    for (size_t i = 0; i < measurements_.size(); ++i) {
      const Eigen::Matrix2d r_inv = measurements_[i].noise.inverse();
      lambda += blocks_[i].transpose() * r_inv * blocks_[i];
      rhs += blocks_[i].transpose() * r_inv *
             Eigen::Vector2d(measurements_[i].flow.u, measurements_[i].flow.v);
    }
    lambda = 0.5 * (lambda + lambda.transpose());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(lambda);
    const double dmin = ldlt.vectorD().minCoeff();
    const double dmax = ldlt.vectorD().maxCoeff();
    if (ldlt.info() != Eigen::Success ||
        dmin <= 1e-12 * std::max(dmax, 1.0)) {
      if (!prior_) return;  // still underdetermined; state() reports it
      throw NumericError("least-squares normal matrix is numerically singular");
    }
    EstimatorState s;
    s.w = ldlt.solve(rhs);
    s.P = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    s.P = 0.5 * (s.P + s.P.transpose());
    s.k = static_cast<long>(measurements_.size());
    state_ = std::move(s);
  }

  BasisModel model_;
  std::optional<WeightPrior> prior_;
  std::vector<Eigen::Matrix<double, 2, Eigen::Dynamic>> blocks_;
  std::vector<Measurement> measurements_;
  std::optional<EstimatorState> state_;
};

}  // namespace flowcast
