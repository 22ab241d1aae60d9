// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "flowcast/compression.hpp"
#include "flowcast/ensemble.hpp"
#include "flowcast/estimator.hpp"
#include "flowcast/policies.hpp"
#include "flowcast/regression.hpp"
#include "oracles.hpp"

using namespace flowcast;

namespace {

const KernelConfig kCfg{2.0, 1.0, 1e-8};

struct Pipeline {
  SyntheticEnsemble synth;
  GramSolver solver;
  LatentMatrix latents;
  CompressionResult comp;

  explicit Pipeline(std::uint64_t seed, const SyntheticSpec& spec = {})
      : synth(generate_synthetic_ensemble(seed, spec, kCfg)),
        solver(std::span(synth.forecast.positions), kCfg),
        latents(fit_all(synth.forecast, solver)),
        comp(compress(latents, synth.forecast.positions, kCfg)) {}

  const BasisModel& model() const { return comp.model; }
};

bool is_candidate_point(const GridSpec& grid, const Position& x) {
  for (int i = 0; i < grid.size(); ++i) {
    const Position p = grid.point(i);
    if (p.x == x.x && p.y == x.y) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("policy kind names round-trip", "[policies]") {
  for (const auto kind :
       {PolicyKind::uniform, PolicyKind::subspace, PolicyKind::active})
    CHECK(parse_policy_kind(to_string(kind)) == kind);
  CHECK_THROWS_AS(parse_policy_kind("greedy"), ValidationError);
}

TEST_CASE("policy config rejects bad grids and rectangles", "[policies]") {
  PolicyConfig cfg;
  cfg.candidates = GridSpec{10.0, -10.0, 13, -10.0, 10.0, 13};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = PolicyConfig{};
  cfg.subspace = Rect{-12.0, -1.0, 0.0, 1.0};  // pokes outside the domain
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg.subspace = Rect{2.0, -1.0, 0.0, 1.0};  // x0 > x1
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg.subspace = Rect{-5.0, -5.0, 5.0, 5.0};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("uniform policy draws candidate grid points reproducibly",
          "[policies]") {
  const Pipeline p(3);
  const auto state = init_from_ensemble(p.model());
  PolicyConfig cfg;
  cfg.kind = PolicyKind::uniform;

  std::mt19937_64 rng_a(123);
  std::mt19937_64 rng_b(123);
  for (int i = 0; i < 20; ++i) {
    const Position a = next_measurement_position(cfg, state, p.model(), rng_a);
    const Position b = next_measurement_position(cfg, state, p.model(), rng_b);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(is_candidate_point(cfg.candidates, a));
  }
}

TEST_CASE("subspace policy samples inside its rectangle", "[policies]") {
  const Pipeline p(3);
  const auto state = init_from_ensemble(p.model());
  PolicyConfig cfg;
  cfg.kind = PolicyKind::subspace;

  SECTION("a rectangle is required") {
    std::mt19937_64 rng(5);
    CHECK_THROWS_AS(next_measurement_position(cfg, state, p.model(), rng),
                    ValidationError);
  }

  SECTION("draws stay inside and are seed-reproducible") {
    cfg.subspace = Rect{-4.0, 1.0, 2.5, 6.0};
    std::mt19937_64 rng_a(5);
    std::mt19937_64 rng_b(5);
    for (int i = 0; i < 100; ++i) {
      const Position a =
          next_measurement_position(cfg, state, p.model(), rng_a);
      const Position b =
          next_measurement_position(cfg, state, p.model(), rng_b);
      CHECK(a.x == b.x);
      CHECK(a.y == b.y);
      CHECK(a.x >= cfg.subspace->x0);
      CHECK(a.x <= cfg.subspace->x1);
      CHECK(a.y >= cfg.subspace->y0);
      CHECK(a.y <= cfg.subspace->y1);
    }
  }
}

TEST_CASE("active policy maximizes posterior flow uncertainty", "[policies]") {
  const Pipeline p(7);
  auto state = init_from_ensemble(p.model());
  PolicyConfig cfg;
  cfg.kind = PolicyKind::active;
  std::mt19937_64 rng(11);

  SECTION("zero covariance scores every candidate alike; first point wins") {
    state.P.setZero();
    const Position x = next_measurement_position(cfg, state, p.model(), rng);
    const Position first = cfg.candidates.point(0);
    CHECK(x.x == first.x);
    CHECK(x.y == first.y);
  }

  SECTION("the chosen point beats an exhaustive scan of the grid") {
    // Skew the covariance with a few updates so the argmax is nontrivial.
    for (const Position& x :
         {Position{-6.0, -6.0}, Position{0.0, 5.0}, Position{4.0, -2.0}})
      update(state, p.model(),
             {x, p.synth.truth(x), 1e-2 * Eigen::Matrix2d::Identity()});

    const Position chosen =
        next_measurement_position(cfg, state, p.model(), rng);
    const double chosen_score =
        query(state, p.model(), chosen).covariance.trace();
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < cfg.candidates.size(); ++i) {
      const double s =
          query(state, p.model(), cfg.candidates.point(i)).covariance.trace();
      CHECK(chosen_score >= s - 1e-12 * std::abs(s));
      best = std::max(best, s);
    }
    CHECK(chosen_score == Catch::Approx(best).epsilon(1e-12));
    CHECK(is_candidate_point(cfg.candidates, chosen));
  }
}

TEST_CASE("default subspace rectangle covers the most uncertain quarter",
          "[policies]") {
  const Pipeline p(9);
  const auto state = init_from_ensemble(p.model());
  const GridSpec grid = PolicyConfig{}.candidates;

  SECTION("matches an independently sorted score list") {
    const auto points = grid.points();
    std::vector<std::pair<double, size_t>> scored;
    for (size_t i = 0; i < points.size(); ++i)
      scored.emplace_back(query(state, p.model(), points[i]).covariance.trace(), i);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    const size_t keep = (points.size() + 3) / 4;
    Rect want{points[scored[0].second].x, points[scored[0].second].y,
              points[scored[0].second].x, points[scored[0].second].y};
    for (size_t i = 1; i < keep; ++i) {
      want.x0 = std::min(want.x0, points[scored[i].second].x);
      want.x1 = std::max(want.x1, points[scored[i].second].x);
      want.y0 = std::min(want.y0, points[scored[i].second].y);
      want.y1 = std::max(want.y1, points[scored[i].second].y);
    }

    const Rect got = default_subspace_rect(state, p.model(), grid);
    CHECK(got.x0 == want.x0);
    CHECK(got.x1 == want.x1);
    CHECK(got.y0 == want.y0);
    CHECK(got.y1 == want.y1);
  }

  SECTION("ties fall back to grid order") {
    // With zero covariance every score is 0, so the kept quarter is the first
    // ceil(169/4) = 43 grid points: rows y0..y2 in full plus four points of
    // row y3.
    auto flat = state;
    flat.P.setZero();
    const Rect got = default_subspace_rect(flat, p.model(), grid);
    CHECK(got.x0 == -10.0);
    CHECK(got.x1 == 10.0);
    CHECK(got.y0 == -10.0);
    CHECK(got.y1 == Catch::Approx(-5.0));
  }

  SECTION("rejects an invalid grid") {
    CHECK_THROWS_AS(
        default_subspace_rect(state, p.model(),
                              GridSpec{1.0, -1.0, 4, -1.0, 1.0, 4}),
        ValidationError);
  }
}

TEST_CASE("holdout truth snaps to the nearest known position", "[policies]") {
  const std::vector<Position> positions{{0.0, 0.0}, {1.0, 0.0}, {0.0, 2.0}};
  const std::vector<FlowVector> flows{{1.0, -1.0}, {2.0, 0.5}, {-3.0, 0.0}};
  const HoldoutTruthField field(positions, flows);

  SECTION("nearest wins") {
    const Position near_b = field.snap({0.8, 0.1});
    CHECK(near_b.x == 1.0);
    CHECK(near_b.y == 0.0);
    CHECK(field.at({0.8, 0.1}).u == 2.0);

    const Position near_c = field.snap({0.1, 1.5});
    CHECK(near_c.x == 0.0);
    CHECK(near_c.y == 2.0);
  }

  SECTION("equidistant queries take the lowest index") {
    const Position mid = field.snap({0.5, 0.0});
    CHECK(mid.x == 0.0);
    CHECK(mid.y == 0.0);
    CHECK(field.at({0.5, 0.0}).v == -1.0);
  }

  SECTION("construction validates the inputs") {
    CHECK_THROWS_AS(
        HoldoutTruthField(std::vector<Position>{}, std::vector<FlowVector>{}),
        ValidationError);
    CHECK_THROWS_AS(
        HoldoutTruthField(positions, std::vector<FlowVector>{{1.0, 1.0}}),
        ValidationError);
  }

  SECTION("wraps a named ensemble member") {
    const Pipeline p(4);
    const auto& e = p.synth.forecast;
    const std::string id = e.members.at(2).id;
    const HoldoutTruthField member(e, id);
    const Position x = e.positions.at(17);
    const FlowVector got = member.at(x);
    const FlowVector want = e.member(id).flows.at(17);
    CHECK(got.u == want.u);
    CHECK(got.v == want.v);
  }
}

TEST_CASE("synthetic truth field is the truth functional", "[policies]") {
  const Pipeline p(6);
  const SyntheticTruthField field(p.synth.truth);
  const Position x{1.7, -3.2};
  CHECK(field.snap(x).x == x.x);  // continuous fields do not snap
  CHECK(field.at(x).u == p.synth.truth(x).u);
  CHECK(field.at(x).v == p.synth.truth(x).v);
}

TEST_CASE("simulated measurements read the truth through the noise model",
          "[policies]") {
  const Pipeline p(8);
  const SyntheticTruthField field(p.synth.truth);
  std::mt19937_64 rng(99);

  SECTION("zero noise reads the field exactly") {
    const Position x{2.5, -1.0};
    const Measurement mea =
        simulate_measurement(field, x, Eigen::Matrix2d::Zero(), rng);
    CHECK(mea.position.x == x.x);
    CHECK(mea.flow.u == field.at(x).u);
    CHECK(mea.flow.v == field.at(x).v);
    CHECK(mea.noise == Eigen::Matrix2d::Zero());
  }

  SECTION("singular noise perturbs only the supported component") {
    Eigen::Matrix2d sigma = Eigen::Matrix2d::Zero();
    sigma(0, 0) = 0.04;
    const Position x{-4.0, 3.0};
    for (int i = 0; i < 10; ++i) {
      const Measurement mea = simulate_measurement(field, x, sigma, rng);
      CHECK(mea.flow.v == field.at(x).v);
    }
  }

  SECTION("sample moments match the requested covariance") {
    Eigen::Matrix2d sigma;
    sigma << 0.04, 0.01, 0.01, 0.09;
    const Position x{0.5, 0.5};
    const FlowVector truth = field.at(x);

    const int n = 100000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Eigen::Matrix2d outer = Eigen::Matrix2d::Zero();
    for (int i = 0; i < n; ++i) {
      const Measurement mea = simulate_measurement(field, x, sigma, rng);
      const Eigen::Vector2d d(mea.flow.u - truth.u, mea.flow.v - truth.v);
      sum += d;
      outer += d * d.transpose();
    }
    const Eigen::Vector2d mean = sum / n;
    const Eigen::Matrix2d cov =
        (outer - n * mean * mean.transpose()) / (n - 1.0);

    // Component means sit within 3 standard errors; covariance within 5%.
    CHECK(std::abs(mean(0)) <= 3.0 * std::sqrt(sigma(0, 0) / n));
    CHECK(std::abs(mean(1)) <= 3.0 * std::sqrt(sigma(1, 1) / n));
    CHECK((cov - sigma).lpNorm<Eigen::Infinity>() <=
          0.05 * sigma.lpNorm<Eigen::Infinity>());
  }

  SECTION("snapping fields are sensed at the snapped position") {
    const std::vector<Position> positions{{0.0, 0.0}, {2.0, 0.0}};
    const std::vector<FlowVector> flows{{1.0, 0.0}, {0.0, 1.0}};
    const HoldoutTruthField holdout(positions, flows);
    const Measurement mea =
        simulate_measurement(holdout, {1.8, 0.3}, Eigen::Matrix2d::Zero(), rng);
    CHECK(mea.position.x == 2.0);
    CHECK(mea.position.y == 0.0);
    CHECK(mea.flow.u == 0.0);
    CHECK(mea.flow.v == 1.0);
  }
}
