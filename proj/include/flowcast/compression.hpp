// SPDX-License-Identifier: Apache-2.0
//
// Compression of the latent ensemble matrix: thin SVD B = U S V^T, truncation
// to the leading modes, and evaluation of the reduced basis H(x) = K(x, X) U.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowcast/core.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/regression.hpp"

namespace flowcast {

struct TruncationRule {
  enum class Kind { fixed_rank, energy };
  Kind kind = Kind::energy;
  int rank = 0;          // fixed_rank: number of modes to keep (>= 1)
  double tau = 0.999;    // energy: smallest r with sum_{i<=r} s_i^2 >= tau * sum s_i^2

  static TruncationRule fixed(int rank) {
    return {Kind::fixed_rank, rank, 0.0};
  }
  static TruncationRule energy_fraction(double tau) {
    return {Kind::energy, 0, tau};
  }

  void validate() const {
    if (kind == Kind::fixed_rank) {
      if (rank < 1) throw ValidationError("truncation rank must be >= 1");
    } else if (!(tau > 0.0) || tau > 1.0) {
      throw ValidationError("truncation energy fraction must be in (0, 1]");
    }
  }
};

/// Reduced flow-field model: mean/covariance of the latent weights w live
/// elsewhere; this holds the geometry needed to evaluate H(x) = K(x, X) U.
struct BasisModel {
  std::vector<Position> positions;  // X_ens
  Eigen::MatrixXd basis;            // U, 2N_V x N_W, orthonormal columns
  Eigen::VectorXd singular_values;  // retained s_1..s_{N_W}
  Eigen::MatrixXd weights;          // W = S V^T, N_W x N_E
  KernelConfig kernel;

  int n_positions() const { return static_cast<int>(positions.size()); }
  int n_modes() const { return static_cast<int>(basis.cols()); }
  int n_members() const { return static_cast<int>(weights.cols()); }

  void validate() const {
    if (positions.empty()) throw ValidationError("basis model has no positions");
    if (basis.rows() != 2 * static_cast<Eigen::Index>(positions.size()))
      throw ValidationError("basis row count does not match 2N_V");
    if (basis.cols() < 1) throw ValidationError("basis model has no modes");
    if (singular_values.size() != basis.cols() || weights.rows() != basis.cols())
      throw ValidationError("basis model shape mismatch");
    kernel.validate();
  }

  /// H(x): 2 x N_W evaluation of the reduced basis at a query point.
  Eigen::Matrix<double, 2, Eigen::Dynamic> basis_at(const Position& x) const {
    return cross_gram(x, std::span(positions), kernel) * basis;
  }

  /// Flow field of a single basis column over arbitrary query points.
  std::vector<FlowVector> basis_field(int mode,
                                      std::span<const Position> query) const {
    if (mode < 0 || mode >= n_modes())
      throw ValidationError("basis mode index out of range");
    std::vector<FlowVector> out;
    out.reserve(query.size());
    for (const auto& x : query) {
      const Eigen::Vector2d f =
          cross_gram(x, std::span(positions), kernel) * basis.col(mode);
      out.push_back({f(0), f(1)});
    }
    return out;
  }
};

struct CompressionResult {
  BasisModel model;
  Eigen::VectorXd spectrum;       // all singular values of B before truncation
  double truncation_error = 0.0;  // ||B - U_r S_r V_r^T||_F / ||B||_F
};

/// Deterministic SVD compression. Sign convention: within each retained
/// column of U the entry of largest magnitude (lowest index on ties) is made
/// positive, with the matching row of W flipped, so equal inputs give
/// bit-identical bases. Trailing singular values <= 1e-12 * s_1 are always
/// dropped as numerical noise, even under a fixed-rank rule.
inline CompressionResult compress(const LatentMatrix& latents,
                                  std::span<const Position> positions,
                                  const KernelConfig& cfg,
                                  const TruncationRule& rule = {}) {
  rule.validate();
  cfg.validate();
  if (latents.B.rows() != 2 * static_cast<Eigen::Index>(positions.size()))
    throw ValidationError("latent matrix rows do not match 2N_V");
  if (latents.B.cols() < 1) throw ValidationError("latent matrix has no columns");
  if (!latents.B.allFinite())
    throw ValidationError("latent matrix contains non-finite entries");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      latents.B, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double s1 = s.size() > 0 ? s(0) : 0.0;
  if (!(s1 > 0.0))
    throw NumericError("latent matrix is identically zero; nothing to compress");

  int significant = 0;
  while (significant < s.size() && s(significant) > 1e-12 * s1) ++significant;

  int keep = significant;
  if (rule.kind == TruncationRule::Kind::fixed_rank) {
    keep = std::min(rule.rank, significant);
  } else {
    const double total = s.squaredNorm();
    double cum = 0.0;
    for (keep = 0; keep < significant; ) {
      cum += s(keep) * s(keep);
      ++keep;
      if (cum >= rule.tau * total) break;
    }
  }
  keep = std::max(keep, 1);

  CompressionResult out;
  out.spectrum = s;
  out.model.positions.assign(positions.begin(), positions.end());
  out.model.kernel = cfg;
  out.model.basis = svd.matrixU().leftCols(keep);
  out.model.singular_values = s.head(keep);
  out.model.weights =
      s.head(keep).asDiagonal() * svd.matrixV().leftCols(keep).transpose();

  for (int c = 0; c < keep; ++c) {
    int arg = 0;
    out.model.basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.model.basis(arg, c) < 0.0) {
      out.model.basis.col(c) *= -1.0;
      out.model.weights.row(c) *= -1.0;
    }
  }

  const double dropped =
      s.tail(s.size() - keep).squaredNorm();
  out.truncation_error = std::sqrt(dropped) / std::sqrt(s.squaredNorm());
  return out;
}

}  // namespace flowcast
