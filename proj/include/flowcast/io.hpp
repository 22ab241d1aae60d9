// SPDX-License-Identifier: Apache-2.0
//
// File formats: run configuration JSON, the fitted-model directory layout,
// and the CSV reports emitted by the command-line tool. All CSVs start with a
// single comment line carrying tool version, seed, and config hash; numeric
// fields are printed losslessly so equal runs produce byte-identical bodies.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "flowcast/compression.hpp"
#include "flowcast/core.hpp"
#include "flowcast/detail/format.hpp"
#include "flowcast/ensemble.hpp"
#include "flowcast/estimator.hpp"
#include "flowcast/harness.hpp"
#include "flowcast/kernels.hpp"

namespace flowcast {

struct RunConfig {
  KernelConfig kernel{2.0, 1.0, 1e-8};
  TruncationRule truncation;
  Eigen::Matrix2d sigma_mea = 1e-3 * Eigen::Matrix2d::Identity();
  double process_noise = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["length_scale"] = kernel.length_scale;
    j["signal_scale"] = kernel.signal_scale;
    j["jitter"] = kernel.jitter;
    if (truncation.kind == TruncationRule::Kind::fixed_rank)
      j["truncation"] = {{"rank", truncation.rank}};
    else
      j["truncation"] = {{"energy", truncation.tau}};
    j["sigma_mea"] = {{sigma_mea(0, 0), sigma_mea(0, 1)},
                      {sigma_mea(1, 0), sigma_mea(1, 1)}};
    j["process_noise"] = process_noise;
    return j;
  }

  static RunConfig from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw ParseError("run config must be a JSON object");
    RunConfig c;
    if (j.contains("length_scale")) c.kernel.length_scale = j.at("length_scale");
    if (j.contains("signal_scale")) c.kernel.signal_scale = j.at("signal_scale");
    if (j.contains("jitter")) c.kernel.jitter = j.at("jitter");
    if (j.contains("truncation")) {
      const auto& t = j.at("truncation");
      if (t.contains("rank"))
        c.truncation = TruncationRule::fixed(t.at("rank").get<int>());
      else if (t.contains("energy"))
        c.truncation = TruncationRule::energy_fraction(t.at("energy").get<double>());
      else
        throw ParseError("truncation must specify 'rank' or 'energy'");
    }
    if (j.contains("sigma_mea")) {
      const auto& s = j.at("sigma_mea");
      if (!s.is_array() || s.size() != 2 || !s[0].is_array() || s[0].size() != 2 ||
          !s[1].is_array() || s[1].size() != 2)
        throw ParseError("sigma_mea must be a 2x2 matrix");
      for (int r = 0; r < 2; ++r)
        for (int col = 0; col < 2; ++col)
          c.sigma_mea(r, col) = s[r][col].get<double>();
    }
    if (j.contains("process_noise")) c.process_noise = j.at("process_noise");
    c.kernel.validate();
    c.truncation.validate();
    if (c.process_noise < 0.0)
      throw ParseError("process_noise must be non-negative");
    return c;
  }

  uint64_t hash() const { return detail::fnv1a64(to_json().dump()); }
};

inline RunConfig load_run_config(std::istream& in) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid config JSON: ") + e.what());
  }
  return RunConfig::from_json(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  return load_run_config(in);
}

/// `# flowcast <version> seed=<seed> config=<hash>`, the one line excluded
/// from byte-identity comparisons between runs.
inline std::string csv_comment_header(uint64_t seed, uint64_t config_hash) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "# flowcast %s seed=%llu config=%016llx",
                kVersion, static_cast<unsigned long long>(seed),
                static_cast<unsigned long long>(config_hash));
  return buf;
}

/// Grid description "x0:x1:nx,y0:y1:ny", e.g. "-10:10:13,-10:10:13".
inline GridSpec parse_grid_spec(const std::string& text) {
  const auto axes = detail::split(text, ',');
  if (axes.size() != 2)
    throw ParseError("grid spec must be 'x0:x1:nx,y0:y1:ny'");
  GridSpec g;
  for (int a = 0; a < 2; ++a) {
    const auto parts = detail::split(axes[a], ':');
    if (parts.size() != 3)
      throw ParseError("grid spec must be 'x0:x1:nx,y0:y1:ny'");
    const double lo = detail::parse_number(parts[0], 1);
    const double hi = detail::parse_number(parts[1], 1);
    const double n = detail::parse_number(parts[2], 1);
    if (n < 1 || n != std::floor(n))
      throw ParseError("grid point counts must be positive integers");
    if (a == 0) {
      g.x0 = lo; g.x1 = hi; g.nx = static_cast<int>(n);
    } else {
      g.y0 = lo; g.y1 = hi; g.ny = static_cast<int>(n);
    }
  }
  if (!g.valid()) throw ParseError("grid spec bounds are invalid");
  return g;
}

namespace detail {

inline nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::ordered_json& j,
                                        const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    throw ParseError(std::string(what) + " must be a non-empty 2-D array");
  Eigen::MatrixXd m(j.size(), j[0].size());
  for (size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j[0].size())
      throw ParseError(std::string(what) + " rows have inconsistent lengths");
    for (size_t c = 0; c < j[r].size(); ++c) {
      if (!j[r][c].is_number())
        throw ParseError(std::string(what) + " must contain numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          j[r][c].get<double>();
    }
  }
  return m;
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

}  // namespace detail

/// Model directory layout:
///   model.json          kernel config, basis, singular values, weights
///   ensemble.json       the source ensemble (needed for holdout truths and
///                       for constructing baseline estimators later)
///   singular_values.csv full pre-truncation spectrum, `index,sigma`
///   basis_<i>.csv       flow field of basis column i at X_ens, `x,y,u,v`
inline void save_model(const std::filesystem::path& dir,
                       const CompressionResult& comp,
                       const EnsembleForecast& ensemble, uint64_t seed,
                       uint64_t config_hash) {
  comp.model.validate();
  std::filesystem::create_directories(dir);

  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["kernel"] = {{"length_scale", comp.model.kernel.length_scale},
                 {"signal_scale", comp.model.kernel.signal_scale},
                 {"jitter", comp.model.kernel.jitter}};
  auto positions = nlohmann::ordered_json::array();
  for (const auto& p : comp.model.positions) positions.push_back({p.x, p.y});
  j["positions"] = std::move(positions);
  j["basis"] = detail::matrix_to_json(comp.model.basis);
  j["singular_values"] =
      std::vector<double>(comp.model.singular_values.data(),
                          comp.model.singular_values.data() +
                              comp.model.singular_values.size());
  j["weights"] = detail::matrix_to_json(comp.model.weights);
  j["spectrum"] = std::vector<double>(
      comp.spectrum.data(), comp.spectrum.data() + comp.spectrum.size());
  j["truncation_error"] = comp.truncation_error;
  detail::write_file(dir / "model.json", j.dump(2) + "\n");

  {
    std::ofstream out(dir / "ensemble.json", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "ensemble.json").string());
    save_ensemble(out, ensemble, EnsembleFormat::json);
  }

  {
    std::string csv = csv_comment_header(seed, config_hash) + "\n";
    csv += "index,sigma\n";
    for (Eigen::Index i = 0; i < comp.spectrum.size(); ++i)
      csv += std::to_string(i) + "," + detail::format_double(comp.spectrum(i)) +
             "\n";
    detail::write_file(dir / "singular_values.csv", csv);
  }

  for (int mode = 0; mode < comp.model.n_modes(); ++mode) {
    const auto field =
        comp.model.basis_field(mode, std::span(comp.model.positions));
    std::string csv = csv_comment_header(seed, config_hash) + "\n";
    csv += "x,y,u,v\n";
    for (size_t i = 0; i < field.size(); ++i)
      csv += detail::format_double(comp.model.positions[i].x) + "," +
             detail::format_double(comp.model.positions[i].y) + "," +
             detail::format_double(field[i].u) + "," +
             detail::format_double(field[i].v) + "\n";
    detail::write_file(dir / ("basis_" + std::to_string(mode) + ".csv"), csv);
  }
}

struct LoadedModel {
  BasisModel model;
  EnsembleForecast ensemble;
};

inline LoadedModel load_model(const std::filesystem::path& dir) {
  std::ifstream min(dir / "model.json");
  if (!min) throw Error("cannot open " + (dir / "model.json").string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(min);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid model JSON: ") + e.what());
  }

  LoadedModel out;
  const auto& kernel = j.at("kernel");
  out.model.kernel.length_scale = kernel.at("length_scale");
  out.model.kernel.signal_scale = kernel.at("signal_scale");
  out.model.kernel.jitter = kernel.at("jitter");
  for (const auto& p : j.at("positions")) {
    if (!p.is_array() || p.size() != 2)
      throw ParseError("model positions must be [x, y] pairs");
    out.model.positions.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  out.model.basis = detail::matrix_from_json(j.at("basis"), "basis");
  const auto& sv = j.at("singular_values");
  out.model.singular_values.resize(static_cast<Eigen::Index>(sv.size()));
  for (size_t i = 0; i < sv.size(); ++i)
    out.model.singular_values(static_cast<Eigen::Index>(i)) = sv[i].get<double>();
  out.model.weights = detail::matrix_from_json(j.at("weights"), "weights");
  out.model.validate();

  std::ifstream ein(dir / "ensemble.json");
  if (!ein) throw Error("cannot open " + (dir / "ensemble.json").string());
  out.ensemble = load_ensemble(ein, EnsembleFormat::json);
  if (out.ensemble.positions.size() != out.model.positions.size())
    throw ValidationError("model and stored ensemble disagree on positions");
  return out;
}

/// Scenario JSON for the timing benchmark. All keys optional:
/// members, modes, mode_spread, noise_scale, grid ("x0:x1:nx,y0:y1:ny"),
/// seed, repeats, checkpoints, plus the run-config kernel/truncation/sigma
/// keys. Defaults reproduce the 169-position, 20-member scenario.
inline BenchScenario load_bench_scenario(std::istream& in) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid scenario JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("scenario must be a JSON object");

  BenchScenario s;
  const RunConfig rc = RunConfig::from_json(j);
  s.kernel = rc.kernel;
  s.truncation = rc.truncation;
  s.sigma_mea = rc.sigma_mea;
  if (j.contains("members")) s.synthetic.n_members = j.at("members").get<int>();
  if (j.contains("modes")) s.synthetic.n_modes = j.at("modes").get<int>();
  if (j.contains("mode_spread")) s.synthetic.mode_spread = j.at("mode_spread");
  if (j.contains("noise_scale")) s.synthetic.noise_scale = j.at("noise_scale");
  if (j.contains("grid"))
    s.synthetic.grid = parse_grid_spec(j.at("grid").get<std::string>());
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  if (j.contains("repeats")) s.repeats = j.at("repeats").get<int>();
  if (j.contains("checkpoints")) {
    s.checkpoints.clear();
    for (const auto& c : j.at("checkpoints")) s.checkpoints.push_back(c.get<int>());
  }
  return s;
}

inline BenchScenario load_bench_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario file " + path.string());
  return load_bench_scenario(in);
}

inline void write_trial_csv(std::ostream& out, const TrialReport& report,
                            uint64_t seed, uint64_t config_hash) {
  out << csv_comment_header(seed, config_hash) << "\n";
  out << "step,x,y,u,v,rms\n";
  out << "0,,,,," << detail::format_double(report.prior_rms) << "\n";
  for (size_t i = 0; i < report.rms.size(); ++i)
    out << (i + 1) << ',' << detail::format_double(report.measured_at[i].x)
        << ',' << detail::format_double(report.measured_at[i].y) << ','
        << detail::format_double(report.measured_flow[i].u) << ','
        << detail::format_double(report.measured_flow[i].v) << ','
        << detail::format_double(report.rms[i]) << "\n";
}

inline void write_loocv_csv(std::ostream& out,
                            std::span<const TrialReport> reports, uint64_t seed,
                            uint64_t config_hash) {
  out << csv_comment_header(seed, config_hash) << "\n";
  out << "holdout,policy,seed,step,rms,ideal_rms\n";
  for (const auto& r : reports) {
    const std::string prefix = r.holdout_id + "," + r.policy + "," +
                               std::to_string(r.seed) + ",";
    const std::string ideal = detail::format_double(r.ideal_rms);
    out << prefix << "0," << detail::format_double(r.prior_rms) << ',' << ideal
        << "\n";
    for (size_t i = 0; i < r.rms.size(); ++i)
      out << prefix << (i + 1) << ',' << detail::format_double(r.rms[i]) << ','
          << ideal << "\n";
  }
}

inline void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows,
                            uint64_t seed, uint64_t config_hash) {
  out << csv_comment_header(seed, config_hash) << "\n";
  out << "method,k,update_ns,query_ns\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.k << ',' << detail::format_double(r.update_ns)
        << ',';
    if (r.query_ns) out << detail::format_double(*r.query_ns);
    out << "\n";
  }
}

inline void write_field_csv(std::ostream& out, std::span<const Position> points,
                            std::span<const FlowEstimate> estimates,
                            uint64_t seed, uint64_t config_hash) {
  if (points.size() != estimates.size())
    throw ValidationError("field dump: point and estimate counts differ");
  out << csv_comment_header(seed, config_hash) << "\n";
  out << "x,y,u,v,cov_uu,cov_uv,cov_vv\n";
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& e = estimates[i];
    out << detail::format_double(points[i].x) << ','
        << detail::format_double(points[i].y) << ','
        << detail::format_double(e.mean.u) << ','
        << detail::format_double(e.mean.v) << ','
        << detail::format_double(e.covariance(0, 0)) << ','
        << detail::format_double(e.covariance(0, 1)) << ','
        << detail::format_double(e.covariance(1, 1)) << "\n";
  }
}

}  // namespace flowcast
