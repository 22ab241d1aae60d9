// SPDX-License-Identifier: Apache-2.0
//
// Scalar squared-exponential kernel, the 2x2 incompressible (divergence-free)
// kernel derived from it, and block Gram matrix assembly.
//
// The incompressible kernel is K(a,b) = D(a) k(a,b) D(b)^T with
// D = [d/dy, -d/dx]^T, so
//   K11 =  d2k/dy dy',  K12 = -d2k/dy dx',
//   K21 = -d2k/dx dy',  K22 =  d2k/dx dx'.
// Every column of K(.,b) is the curl of a scalar stream function and is
// therefore an exactly divergence-free 2-D vector field.

#pragma once

#include <span>

#include <Eigen/Dense>

#include "flowcast/core.hpp"

namespace flowcast {

struct KernelConfig {
  double length_scale = 1.0;  // l, distance units
  double signal_scale = 1.0;  // sigma_ker, flow-speed units
  double jitter = 0.0;        // unitless multiplier on sigma^2/l^2

  void validate() const {
    if (!(length_scale > 0.0) || !std::isfinite(length_scale))
      throw ValidationError("kernel length_scale must be positive");
    if (!(signal_scale > 0.0) || !std::isfinite(signal_scale))
      throw ValidationError("kernel signal_scale must be positive");
    if (jitter < 0.0 || !std::isfinite(jitter))
      throw ValidationError("kernel jitter must be non-negative");
  }

  /// Regularization magnitude used by the latent solve: jitter * sigma^2/l^2.
  double ridge() const {
    return jitter * signal_scale * signal_scale / (length_scale * length_scale);
  }
};

/// k_SE(a,b) = sigma^2 exp(-|b-a|^2 / (2 l^2)).
inline double se_kernel(const Position& a, const Position& b,
                        const KernelConfig& cfg) {
  const double r2 = squared_distance(a, b);
  const double l2 = cfg.length_scale * cfg.length_scale;
  return cfg.signal_scale * cfg.signal_scale * std::exp(-r2 / (2.0 * l2));
}

/// Inner-kernel seam: an inner kernel supplies its scalar value and the 2x2
/// incompressible block in closed form.
struct SquaredExponential {
  double value(const Position& a, const Position& b,
               const KernelConfig& cfg) const {
    return se_kernel(a, b, cfg);
  }

  Eigen::Matrix2d incompressible(const Position& a, const Position& b,
                                 const KernelConfig& cfg) const {
    const double l2 = cfg.length_scale * cfg.length_scale;
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double q = se_kernel(a, b, cfg) / l2;
    Eigen::Matrix2d k;
    k(0, 0) = q * (1.0 - dy * dy / l2);
    k(0, 1) = q * dx * dy / l2;
    k(1, 0) = k(0, 1);
    k(1, 1) = q * (1.0 - dx * dx / l2);
    return k;
  }
};

inline Eigen::Matrix2d incompressible_kernel(const Position& a,
                                             const Position& b,
                                             const KernelConfig& cfg) {
  return SquaredExponential{}.incompressible(a, b, cfg);
}

/// Block Gram matrix between position sets P and Q, shape 2|P| x 2|Q|.
/// Block (i,j) is the incompressible kernel of (P_i, Q_j); rows index P.
/// Each position contributes a contiguous (u-row, v-row) band, matching the
/// interleaved vectorization of flow data.
template <class Inner = SquaredExponential>
Eigen::MatrixXd gram(std::span<const Position> P, std::span<const Position> Q,
                     const KernelConfig& cfg, const Inner& inner = {}) {
  cfg.validate();
  if (P.empty() || Q.empty())
    throw ValidationError("gram: empty position list");
  Eigen::MatrixXd g(2 * P.size(), 2 * Q.size());
  for (size_t j = 0; j < Q.size(); ++j)
    for (size_t i = 0; i < P.size(); ++i)
      g.block<2, 2>(2 * static_cast<Eigen::Index>(i),
                    2 * static_cast<Eigen::Index>(j)) =
          inner.incompressible(P[i], Q[j], cfg);
  return g;
}

/// Cross-Gram row block K(x, X), shape 2 x 2|X|.
template <class Inner = SquaredExponential>
Eigen::Matrix<double, 2, Eigen::Dynamic> cross_gram(
    const Position& x, std::span<const Position> X, const KernelConfig& cfg,
    const Inner& inner = {}) {
  if (X.empty()) throw ValidationError("cross_gram: empty position list");
  Eigen::Matrix<double, 2, Eigen::Dynamic> g(2, 2 * X.size());
  for (size_t j = 0; j < X.size(); ++j)
    g.block<2, 2>(0, 2 * static_cast<Eigen::Index>(j)) =
        inner.incompressible(x, X[j], cfg);
  return g;
}

}  // namespace flowcast
