// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include <flowcast/kernels.hpp>

#include "oracles.hpp"

using namespace flowcast;

TEST_CASE("config validation rejects bad hyperparameters", "[kernels]") {
  CHECK_NOTHROW((KernelConfig{1.0, 1.0, 0.0}).validate());
  CHECK_NOTHROW((KernelConfig{2.0, 0.5, 1e-8}).validate());
  CHECK_THROWS_AS((KernelConfig{0.0, 1.0, 0.0}).validate(), ValidationError);
  CHECK_THROWS_AS((KernelConfig{-1.0, 1.0, 0.0}).validate(), ValidationError);
  CHECK_THROWS_AS((KernelConfig{1.0, 0.0, 0.0}).validate(), ValidationError);
  CHECK_THROWS_AS((KernelConfig{1.0, 1.0, -1e-9}).validate(), ValidationError);
}

TEST_CASE("scalar kernel closed-form values", "[kernels]") {
  const KernelConfig cfg{1.0, 1.0, 0.0};
  CHECK(se_kernel({0.3, -0.7}, {0.3, -0.7}, cfg) == 1.0);
  CHECK_THAT(se_kernel({0.0, 0.0}, {1.0, 0.0}, cfg),
             Catch::Matchers::WithinAbs(std::exp(-0.5), 1e-12));

  const KernelConfig scaled{2.0, 3.0, 0.0};
  CHECK_THAT(se_kernel({0.0, 0.0}, {2.0, 0.0}, scaled),
             Catch::Matchers::WithinAbs(9.0 * std::exp(-0.5), 1e-12));
}

TEST_CASE("scalar kernel is exactly symmetric", "[kernels]") {
  const KernelConfig cfg{1.7, 0.9, 0.0};
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Position a = oracles::random_position(rng, -5.0, 5.0);
    const Position b = oracles::random_position(rng, -5.0, 5.0);
    CHECK(se_kernel(a, b, cfg) == se_kernel(b, a, cfg));
  }
}

TEST_CASE("incompressible kernel at coincident points", "[kernels]") {
  const KernelConfig unit{1.0, 1.0, 0.0};
  const Position a{0.4, -1.2};
  const Eigen::Matrix2d k = incompressible_kernel(a, a, unit);
  CHECK_THAT((k - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(),
             Catch::Matchers::WithinAbs(0.0, 1e-12));

  const KernelConfig cfg{2.0, 3.0, 0.0};
  const Eigen::Matrix2d ks = incompressible_kernel(a, a, cfg);
  const double expect = 9.0 / 4.0;  // sigma^2 / l^2
  CHECK_THAT((ks - expect * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(),
             Catch::Matchers::WithinAbs(0.0, 1e-12));

  const Eigen::Matrix2d fd = oracles::fd_incompressible_block(a, a, unit, 1e-4);
  CHECK_THAT((k - fd).cwiseAbs().maxCoeff(), Catch::Matchers::WithinAbs(0.0, 1e-6));
}

TEST_CASE("incompressible kernel matches finite-difference oracle", "[kernels]") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> radius(0.0, 5.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  const KernelConfig cfg{1.3, 1.1, 0.0};
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Position a = oracles::random_position(rng, -3.0, 3.0);
    const double r = radius(rng) * cfg.length_scale;
    const double t = angle(rng);
    const Position b{a.x + r * std::cos(t), a.y + r * std::sin(t)};
    const Eigen::Matrix2d got = incompressible_kernel(a, b, cfg);
    const Eigen::Matrix2d want =
        oracles::fd_incompressible_block(a, b, cfg, 1e-4 * cfg.length_scale);
    const double scale = want.cwiseAbs().maxCoeff();
    worst = std::max(worst,
                     (got - want).cwiseAbs().maxCoeff() / std::max(scale, 1e-12));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("incompressible kernel swap gives the transpose", "[kernels]") {
  const KernelConfig cfg{0.8, 1.4, 0.0};
  std::mt19937_64 rng(31);
  for (int i = 0; i < 50; ++i) {
    const Position a = oracles::random_position(rng, -4.0, 4.0);
    const Position b = oracles::random_position(rng, -4.0, 4.0);
    const Eigen::Matrix2d kab = incompressible_kernel(a, b, cfg);
    const Eigen::Matrix2d kba = incompressible_kernel(b, a, cfg);
    CHECK((kab - kba.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("gram shape and block layout", "[kernels]") {
  const KernelConfig cfg{1.0, 1.0, 0.0};
  const std::vector<Position> p{{0.0, 0.0}, {1.0, 2.0}};
  const std::vector<Position> q{{0.5, 0.5}, {-1.0, 0.0}, {2.0, -2.0}};
  const Eigen::MatrixXd g = gram(std::span(p), std::span(q), cfg);
  REQUIRE(g.rows() == 4);
  REQUIRE(g.cols() == 6);
  for (size_t i = 0; i < p.size(); ++i)
    for (size_t j = 0; j < q.size(); ++j) {
      const Eigen::Matrix2d want = incompressible_kernel(p[i], q[j], cfg);
      CHECK((g.block<2, 2>(2 * i, 2 * j) - want).cwiseAbs().maxCoeff() == 0.0);
    }

  const std::vector<Position> single{{0.3, 0.9}};
  const Eigen::MatrixXd g1 = gram(std::span(single), std::span(single), cfg);
  CHECK((g1 - incompressible_kernel(single[0], single[0], cfg))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  const std::vector<Position> none;
  CHECK_THROWS_AS(gram(std::span(none), std::span(q), cfg), ValidationError);
  CHECK_THROWS_AS(gram(std::span(p), std::span(none), cfg), ValidationError);
}

TEST_CASE("self gram is symmetric positive semidefinite", "[kernels]") {
  const KernelConfig cfg{1.2, 0.8, 0.0};
  std::mt19937_64 rng(47);
  std::vector<Position> p;
  for (int i = 0; i < 10; ++i) p.push_back(oracles::random_position(rng, -5, 5));
  const Eigen::MatrixXd g = gram(std::span(p), std::span(p), cfg);

  const double gmax = g.cwiseAbs().maxCoeff();
  CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * gmax);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  REQUIRE(es.info() == Eigen::Success);
  CHECK(es.eigenvalues().minCoeff() >= -1e-9 * es.eigenvalues().maxCoeff());
}

TEST_CASE("kernel sections are divergence-free", "[kernels]") {
  const KernelConfig cfg{2.0, 1.3, 0.0};
  const double tol =
      1e-5 * cfg.signal_scale * cfg.signal_scale /
      (cfg.length_scale * cfg.length_scale * cfg.length_scale);
  const Position b{0.5, -0.25};
  std::mt19937_64 rng(59);

  std::vector<Position> probes;
  for (int i = 0; i < 40; ++i) probes.push_back(oracles::random_position(rng, -6, 6));
  // The region |dx| ~ |dy| ~ 1.2 l maximizes the truncation error of central
  // difference stencils on SE sections; probe it explicitly.
  probes.push_back({b.x + 1.2 * cfg.length_scale, b.y + 1.2 * cfg.length_scale});
  probes.push_back({b.x - 1.2 * cfg.length_scale, b.y + 1.2 * cfg.length_scale});

  for (int column = 0; column < 2; ++column) {
    const auto field = [&](const Position& a) {
      const Eigen::Matrix2d k = incompressible_kernel(a, b, cfg);
      return FlowVector{k(0, column), k(1, column)};
    };
    for (const auto& a : probes)
      CHECK(std::abs(oracles::fd_divergence(field, a, cfg.length_scale / 100.0)) <=
            tol);
  }
}

TEST_CASE("gram accepts a custom inner kernel", "[kernels]") {
  // The inner-kernel seam: any twice-differentiable scalar kernel works. A
  // rescaled SE must produce exactly the rescaled blocks.
  struct DoubledSE {
    double value(const Position& a, const Position& b,
                 const KernelConfig& cfg) const {
      return 2.0 * se_kernel(a, b, cfg);
    }
    Eigen::Matrix2d incompressible(const Position& a, const Position& b,
                                   const KernelConfig& cfg) const {
      return 2.0 * SquaredExponential{}.incompressible(a, b, cfg);
    }
  };
  const KernelConfig cfg{1.0, 1.0, 0.0};
  const std::vector<Position> p{{0.0, 0.0}, {1.0, 1.0}};
  const Eigen::MatrixXd g2 = gram(std::span(p), std::span(p), cfg, DoubledSE{});
  const Eigen::MatrixXd g = gram(std::span(p), std::span(p), cfg);
  CHECK((g2 - 2.0 * g).cwiseAbs().maxCoeff() <= 1e-15);
}
