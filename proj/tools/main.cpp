// SPDX-License-Identifier: Apache-2.0
//
// flowcast command-line tool: fit a compact flow-field model from an ensemble
// forecast, refine it against simulated measurements, evaluate policies by
// leave-one-out cross-validation, benchmark the estimators, and dump fields.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <flowcast/flowcast.hpp>

namespace {

using namespace flowcast;

EnsembleFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return EnsembleFormat::csv;
  if (ext == ".json") return EnsembleFormat::json;
  throw ValidationError("ensemble file must end in .csv or .json: " +
                        path.string());
}

EnsembleForecast load_ensemble_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ensemble file " + path.string());
  return load_ensemble(in, format_from_path(path));
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

/// Square candidate grid over the bounding box of the model positions, with
/// the side count matching the position count when it is a perfect square.
GridSpec default_candidates(const std::vector<Position>& positions) {
  Rect r{positions[0].x, positions[0].y, positions[0].x, positions[0].y};
  for (const auto& p : positions) {
    r.x0 = std::min(r.x0, p.x);
    r.x1 = std::max(r.x1, p.x);
    r.y0 = std::min(r.y0, p.y);
    r.y1 = std::max(r.y1, p.y);
  }
  const int side = std::max(
      2, static_cast<int>(std::lround(std::sqrt(double(positions.size())))));
  return {r.x0, r.x1, side, r.y0, r.y1, side};
}

struct FitArgs {
  std::string ensemble, config, out;
};

int run_fit(const FitArgs& a) {
  const EnsembleForecast ensemble = load_ensemble_file(a.ensemble);
  const RunConfig cfg = load_run_config(a.config);
  const CompressionResult comp =
      compress(fit_all(ensemble, cfg.kernel), std::span(ensemble.positions),
               cfg.kernel, cfg.truncation);
  save_model(a.out, comp, ensemble, 0, cfg.hash());
  std::cerr << "model written to " << a.out << " (rank "
            << comp.model.n_modes() << ", truncation error "
            << comp.truncation_error << ")\n";
  return 0;
}

struct SimulateArgs {
  std::string model, truth = "synthetic", policy = "uniform", out, config;
  std::string grid;
  int n_meas = 10;
  uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  const LoadedModel loaded = load_model(a.model);
  RunConfig cfg;
  cfg.kernel = loaded.model.kernel;
  if (!a.config.empty()) cfg = load_run_config(a.config);

  TrialOptions opts;
  opts.policy.kind = parse_policy_kind(a.policy);
  opts.policy.candidates = a.grid.empty()
                               ? default_candidates(loaded.model.positions)
                               : parse_grid_spec(a.grid);
  opts.policy.seed = a.seed;
  opts.n_meas = a.n_meas;
  opts.sigma_mea = cfg.sigma_mea;
  opts.estimator.process_noise = cfg.process_noise;

  const TrialModel tm = prepare_trial_model(loaded.model);
  std::unique_ptr<TruthField> truth;
  std::string holdout_id;
  if (a.truth == "synthetic") {
    // Truth weights drawn from the model prior; the resulting field lies in
    // the span of the basis, so exhaustive sensing could recover it exactly.
    std::mt19937_64 rng(a.seed ^ 0x7f4a7c15ULL);
    std::normal_distribution<double> normal;
    Eigen::VectorXd w = tm.init.w;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w(i) += std::sqrt(std::max(0.0, tm.init.P(i, i))) * normal(rng);
    truth = std::make_unique<SyntheticTruthField>(
        SyntheticTruth{loaded.model.positions, loaded.model.basis * w,
                       loaded.model.kernel});
  } else if (a.truth.rfind("holdout:", 0) == 0) {
    holdout_id = a.truth.substr(8);
    truth = std::make_unique<HoldoutTruthField>(loaded.ensemble, holdout_id);
  } else {
    throw ValidationError("--truth must be 'synthetic' or 'holdout:<id>'");
  }

  TrialReport report = run_trial(tm, *truth, opts);
  report.holdout_id = holdout_id;
  auto out = open_output(a.out);
  write_trial_csv(out, report, a.seed, cfg.hash());
  std::cerr << "trial written to " << a.out << " (final RMS "
            << report.final_rms() << ", ideal " << report.ideal_rms << ")\n";
  return 0;
}

struct LoocvArgs {
  std::string ensemble, config, policy = "uniform", out;
  std::string grid;
  int seeds = 1;
  int n_meas = 10;
  uint64_t seed = 0;
};

int run_loocv_cmd(const LoocvArgs& a) {
  const EnsembleForecast ensemble = load_ensemble_file(a.ensemble);
  const RunConfig rc = load_run_config(a.config);
  LoocvConfig cfg;
  cfg.kernel = rc.kernel;
  cfg.truncation = rc.truncation;
  cfg.trial.policy.kind = parse_policy_kind(a.policy);
  cfg.trial.policy.candidates = a.grid.empty()
                                    ? default_candidates(ensemble.positions)
                                    : parse_grid_spec(a.grid);
  cfg.trial.policy.seed = a.seed;
  cfg.trial.n_meas = a.n_meas;
  cfg.trial.sigma_mea = rc.sigma_mea;
  cfg.trial.estimator.process_noise = rc.process_noise;

  const std::vector<TrialReport> reports =
      run_loocv_sweep(ensemble, cfg, a.seeds);
  auto out = open_output(a.out);
  write_loocv_csv(out, std::span(reports), a.seed, rc.hash());
  std::cerr << reports.size() << " trials written to " << a.out << "\n";
  return 0;
}

struct BenchArgs {
  std::string scenario, methods = "ours,ko,gp,ls", out;
  int kmax = 1000;
};

int run_bench(const BenchArgs& a) {
  const BenchScenario scene = a.scenario.empty()
                                  ? BenchScenario{}
                                  : load_bench_scenario(a.scenario);
  std::vector<std::string> methods;
  for (const auto& m : detail::split(a.methods, ','))
    methods.emplace_back(detail::trim(m));
  const std::vector<BenchRow> rows = run_timing_bench(scene, methods, a.kmax);
  RunConfig rc;
  rc.kernel = scene.kernel;
  rc.truncation = scene.truncation;
  rc.sigma_mea = scene.sigma_mea;
  auto out = open_output(a.out);
  write_bench_csv(out, std::span(rows), scene.seed, rc.hash());
  std::cerr << rows.size() << " timing rows written to " << a.out << "\n";
  return 0;
}

struct QueryArgs {
  std::string model, state = "init", grid, out;
  uint64_t seed = 0;
};

int run_query(const QueryArgs& a) {
  const LoadedModel loaded = load_model(a.model);
  EstimatorState state;
  if (a.state == "init") {
    state = init_from_ensemble(loaded.model);
  } else {
    std::ifstream in(a.state);
    if (!in) throw Error("cannot open state file " + a.state);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid state JSON: ") + e.what());
    }
    state = state_from_json(j);
  }
  if (state.n_modes() != loaded.model.n_modes())
    throw ValidationError("state rank does not match model rank");

  const GridSpec grid = parse_grid_spec(a.grid);
  const std::vector<Position> points = grid.points();
  std::vector<FlowEstimate> estimates;
  estimates.reserve(points.size());
  for (const auto& p : points)
    estimates.push_back(query(state, loaded.model, p));

  RunConfig rc;
  rc.kernel = loaded.model.kernel;
  auto out = open_output(a.out);
  write_field_csv(out, std::span(points), std::span(estimates), a.seed,
                  rc.hash());
  std::cerr << points.size() << " field rows written to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compact probabilistic flow-field models from ensemble forecasts"};
  app.set_version_flag("--version", std::string("flowcast ") + kVersion);
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand(
      "fit", "fit a compressed flow-field model from an ensemble forecast");
  fit_cmd->add_option("--ensemble", fit.ensemble, "ensemble CSV or JSON file")
      ->required();
  fit_cmd->add_option("--config", fit.config, "run config JSON")->required();
  fit_cmd->add_option("--out", fit.out, "output model directory")->required();

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand(
      "simulate", "run a measurement trial against a truth field");
  sim_cmd->add_option("--model", sim.model, "model directory from fit")
      ->required();
  sim_cmd->add_option("--truth", sim.truth, "synthetic or holdout:<id>")
      ->capture_default_str();
  sim_cmd->add_option("--policy", sim.policy, "uniform, subspace, or active")
      ->capture_default_str();
  sim_cmd->add_option("--n-meas", sim.n_meas, "number of measurements")
      ->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "random seed")->capture_default_str();
  sim_cmd->add_option("--out", sim.out, "output CSV")->required();
  sim_cmd->add_option("--config", sim.config,
                      "run config JSON (measurement noise, process noise)");
  sim_cmd->add_option("--grid", sim.grid,
                      "candidate grid x0:x1:nx,y0:y1:ny (default: model grid)");

  LoocvArgs loocv;
  auto* loocv_cmd = app.add_subcommand(
      "loocv", "leave-one-out policy evaluation over all ensemble members");
  loocv_cmd->add_option("--ensemble", loocv.ensemble, "ensemble CSV or JSON file")
      ->required();
  loocv_cmd->add_option("--config", loocv.config, "run config JSON")->required();
  loocv_cmd->add_option("--policy", loocv.policy, "uniform, subspace, or active")
      ->capture_default_str();
  loocv_cmd->add_option("--seeds", loocv.seeds, "trials per held-out member")
      ->capture_default_str();
  loocv_cmd->add_option("--n-meas", loocv.n_meas, "measurements per trial")
      ->capture_default_str();
  loocv_cmd->add_option("--seed", loocv.seed, "base random seed")
      ->capture_default_str();
  loocv_cmd->add_option("--out", loocv.out, "output CSV")->required();
  loocv_cmd->add_option("--grid", loocv.grid,
                        "candidate grid spec (default: ensemble grid)");

  BenchArgs bench;
  auto* bench_cmd =
      app.add_subcommand("bench", "wall-time benchmark of the estimators");
  bench_cmd->add_option("--scenario", bench.scenario,
                        "scenario JSON (default: built-in 169-position scenario)");
  bench_cmd->add_option("--methods", bench.methods,
                        "comma-separated subset of ours,ko,gp,ls")
      ->capture_default_str();
  bench_cmd->add_option("--kmax", bench.kmax, "maximum measurement count")
      ->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "output CSV")->required();

  QueryArgs query;
  auto* query_cmd = app.add_subcommand(
      "query", "dump the posterior mean field and covariance on a grid");
  query_cmd->add_option("--model", query.model, "model directory from fit")
      ->required();
  query_cmd->add_option("--state", query.state,
                        "estimator state JSON, or 'init' for the prior")
      ->capture_default_str();
  query_cmd->add_option("--grid", query.grid, "query grid x0:x1:nx,y0:y1:ny")
      ->required();
  query_cmd->add_option("--seed", query.seed, "seed recorded in the header")
      ->capture_default_str();
  query_cmd->add_option("--out", query.out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) return run_fit(fit);
    if (sim_cmd->parsed()) return run_simulate(sim);
    if (loocv_cmd->parsed()) return run_loocv_cmd(loocv);
    if (bench_cmd->parsed()) return run_bench(bench);
    if (query_cmd->parsed()) return run_query(query);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
