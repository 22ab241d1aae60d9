// SPDX-License-Identifier: Apache-2.0
//
// Ensemble forecast data model, CSV/JSON ingestion, per-position statistics,
// and a synthetic-ensemble generator for desk-scale experiments.

#pragma once

#include <algorithm>
#include <cstdlib>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "flowcast/core.hpp"
#include "flowcast/detail/format.hpp"
#include "flowcast/kernels.hpp"

namespace flowcast {

struct EnsembleMember {
  std::string id;
  std::vector<FlowVector> flows;  // index-aligned with EnsembleForecast positions
};

/// Interleaved vectorization [u1, v1, u2, v2, ...] of a flow list.
inline Eigen::VectorXd vectorize(std::span<const FlowVector> flows) {
  Eigen::VectorXd eta(2 * flows.size());
  for (size_t i = 0; i < flows.size(); ++i) {
    eta(2 * i) = flows[i].u;
    eta(2 * i + 1) = flows[i].v;
  }
  return eta;
}

inline std::vector<FlowVector> devectorize(const Eigen::VectorXd& eta) {
  if (eta.size() % 2 != 0)
    throw ValidationError("devectorize: vector length must be even");
  std::vector<FlowVector> flows(static_cast<size_t>(eta.size() / 2));
  for (size_t i = 0; i < flows.size(); ++i)
    flows[i] = {eta(2 * i), eta(2 * i + 1)};
  return flows;
}

struct EnsembleForecast {
  std::vector<Position> positions;      // X_ens, length N_V
  std::vector<EnsembleMember> members;  // length N_E
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  int n_positions() const { return static_cast<int>(positions.size()); }
  int n_members() const { return static_cast<int>(members.size()); }

  const EnsembleMember& member(const std::string& id) const {
    for (const auto& m : members)
      if (m.id == id) return m;
    throw ValidationError("unknown ensemble member id '" + id + "'");
  }

  void validate() const {
    if (members.empty()) throw ValidationError("ensemble has no members");
    if (positions.empty()) throw ValidationError("ensemble has no positions");
    for (const auto& p : positions)
      if (!is_finite(p)) throw ValidationError("non-finite ensemble position");
    for (size_t i = 0; i < positions.size(); ++i)
      for (size_t j = i + 1; j < positions.size(); ++j)
        if (positions[i] == positions[j])
          throw ValidationError("duplicate ensemble position (" +
                                detail::format_double(positions[i].x) + ", " +
                                detail::format_double(positions[i].y) + ")");
    for (const auto& m : members) {
      if (m.flows.size() != positions.size())
        throw ValidationError("member '" + m.id + "' has " +
                              std::to_string(m.flows.size()) +
                              " flow vectors, expected " +
                              std::to_string(positions.size()));
      for (const auto& f : m.flows)
        if (!is_finite(f))
          throw ValidationError("non-finite flow vector in member '" + m.id + "'");
    }
  }

  /// Forecast with one member removed (for leave-one-out evaluation).
  EnsembleForecast without_member(const std::string& id) const {
    EnsembleForecast out;
    out.positions = positions;
    out.metadata = metadata;
    for (const auto& m : members)
      if (m.id != id) out.members.push_back(m);
    if (out.members.size() == members.size())
      throw ValidationError("unknown ensemble member id '" + id + "'");
    return out;
  }
};

enum class EnsembleFormat { csv, json };

namespace detail {

inline double parse_number(std::string_view field, long line) {
  const std::string s{trim(field)};
  if (s.empty()) throw ParseError("empty numeric field", line);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw ParseError("non-numeric field '" + s + "'", line);
  return v;
}

struct PositionLess {
  bool operator()(const Position& a, const Position& b) const {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  }
};

}  // namespace detail

/// CSV format: optional `# {json metadata}` comment line, then header
/// `member,x,y,u,v`. Rows may be grouped or interleaved by member; every
/// member must cover the identical position set (exact coordinate equality).
inline EnsembleForecast load_ensemble_csv(std::istream& in) {
  EnsembleForecast out;
  std::string line;
  long line_no = 0;
  bool header_seen = false;
  std::vector<std::string> member_order;
  std::map<std::string, std::vector<std::pair<Position, FlowVector>>> rows;

  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      if (!header_seen && out.metadata.empty()) {
        const auto body = detail::trim(t.substr(1));
        auto parsed = nlohmann::ordered_json::parse(body, nullptr, false);
        if (parsed.is_object()) out.metadata = std::move(parsed);
      }
      continue;
    }
    if (!header_seen) {
      auto fields = detail::split(t, ',');
      if (fields.size() != 5 || detail::trim(fields[0]) != "member" ||
          detail::trim(fields[1]) != "x" || detail::trim(fields[2]) != "y" ||
          detail::trim(fields[3]) != "u" || detail::trim(fields[4]) != "v")
        throw ParseError("expected header 'member,x,y,u,v'", line_no);
      header_seen = true;
      continue;
    }
    auto fields = detail::split(t, ',');
    if (fields.size() != 5)
      throw ParseError("expected 5 fields, got " + std::to_string(fields.size()),
                       line_no);
    const std::string id{detail::trim(fields[0])};
    if (id.empty()) throw ParseError("empty member id", line_no);
    const Position p{detail::parse_number(fields[1], line_no),
                     detail::parse_number(fields[2], line_no)};
    const FlowVector f{detail::parse_number(fields[3], line_no),
                       detail::parse_number(fields[4], line_no)};
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) member_order.push_back(id);
    it->second.emplace_back(p, f);
  }
  if (!header_seen) throw ParseError("missing CSV header", line_no);
  if (member_order.empty()) throw ValidationError("CSV contains no data rows");

  // The first member fixes the canonical position order.
  const auto& first = rows.at(member_order.front());
  std::map<Position, size_t, detail::PositionLess> index;
  for (const auto& [p, f] : first) {
    if (!index.try_emplace(p, out.positions.size()).second)
      throw ValidationError("duplicate position in member '" +
                            member_order.front() + "'");
    out.positions.push_back(p);
  }

  for (const auto& id : member_order) {
    const auto& rs = rows.at(id);
    if (rs.size() != out.positions.size())
      throw ValidationError("member '" + id + "' has " +
                            std::to_string(rs.size()) + " rows, expected " +
                            std::to_string(out.positions.size()));
    EnsembleMember m{id, std::vector<FlowVector>(out.positions.size())};
    std::vector<bool> seen(out.positions.size(), false);
    for (const auto& [p, f] : rs) {
      const auto it = index.find(p);
      if (it == index.end())
        throw ValidationError("member '" + id +
                              "' has a position outside the ensemble set");
      if (seen[it->second])
        throw ValidationError("duplicate position in member '" + id + "'");
      seen[it->second] = true;
      m.flows[it->second] = f;
    }
    out.members.push_back(std::move(m));
  }
  out.validate();
  return out;
}

/// JSON format: { "positions": [[x,y],...], "members": {"id": [[u,v],...]} }.
/// Any other top-level keys are preserved as uninterpreted metadata.
inline EnsembleForecast load_ensemble_json(std::istream& in) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("positions") || !j.contains("members"))
    throw ParseError("ensemble JSON must contain 'positions' and 'members'");

  EnsembleForecast out;
  for (const auto& p : j.at("positions")) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ParseError("positions entries must be numeric [x, y] pairs");
    out.positions.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  const auto& members = j.at("members");
  if (!members.is_object()) throw ParseError("'members' must be an object");
  for (const auto& [id, flows] : members.items()) {
    EnsembleMember m{id, {}};
    if (!flows.is_array())
      throw ParseError("member '" + id + "' must be an array of [u, v] pairs");
    for (const auto& f : flows) {
      if (!f.is_array() || f.size() != 2 || !f[0].is_number() || !f[1].is_number())
        throw ParseError("member '" + id + "' contains a non-numeric flow");
      m.flows.push_back({f[0].get<double>(), f[1].get<double>()});
    }
    if (m.flows.size() != out.positions.size())
      throw ValidationError("member '" + id + "' has " +
                            std::to_string(m.flows.size()) +
                            " flow vectors, expected " +
                            std::to_string(out.positions.size()));
    out.members.push_back(std::move(m));
  }
  for (const auto& [key, value] : j.items())
    if (key != "positions" && key != "members") out.metadata[key] = value;
  out.validate();
  return out;
}

inline EnsembleForecast load_ensemble(std::istream& in, EnsembleFormat format) {
  return format == EnsembleFormat::csv ? load_ensemble_csv(in)
                                       : load_ensemble_json(in);
}

inline void save_ensemble(std::ostream& out, const EnsembleForecast& e,
                          EnsembleFormat format) {
  if (format == EnsembleFormat::csv) {
    if (!e.metadata.empty()) out << "# " << e.metadata.dump() << "\n";
    out << "member,x,y,u,v\n";
    for (const auto& m : e.members)
      for (size_t i = 0; i < e.positions.size(); ++i)
        out << m.id << ',' << detail::format_double(e.positions[i].x) << ','
            << detail::format_double(e.positions[i].y) << ','
            << detail::format_double(m.flows[i].u) << ','
            << detail::format_double(m.flows[i].v) << "\n";
  } else {
    nlohmann::ordered_json j;
    auto positions = nlohmann::ordered_json::array();
    for (const auto& p : e.positions) positions.push_back({p.x, p.y});
    j["positions"] = std::move(positions);
    auto members = nlohmann::ordered_json::object();
    for (const auto& m : e.members) {
      auto flows = nlohmann::ordered_json::array();
      for (const auto& f : m.flows) flows.push_back({f.u, f.v});
      members[m.id] = std::move(flows);
    }
    j["members"] = std::move(members);
    for (const auto& [key, value] : e.metadata.items()) j[key] = value;
    out << j.dump(2) << "\n";
  }
}

struct EnsembleStats {
  std::vector<FlowVector> mean;
  std::vector<Eigen::Matrix2d> covariance;  // sample covariance, N-1 denominator
};

inline std::vector<FlowVector> ensemble_mean(const EnsembleForecast& e) {
  e.validate();
  std::vector<FlowVector> mean(e.positions.size());
  for (const auto& m : e.members)
    for (size_t i = 0; i < mean.size(); ++i) {
      mean[i].u += m.flows[i].u;
      mean[i].v += m.flows[i].v;
    }
  for (auto& f : mean) {
    f.u /= e.n_members();
    f.v /= e.n_members();
  }
  return mean;
}

/// Per-position sample mean and 2x2 sample covariance over members.
inline EnsembleStats aggregate_statistics(const EnsembleForecast& e) {
  if (e.n_members() < 2)
    throw ValidationError(
        "ensemble covariance requires at least two members (N_E >= 2)");
  EnsembleStats stats;
  stats.mean = ensemble_mean(e);
  stats.covariance.assign(e.positions.size(), Eigen::Matrix2d::Zero());
  for (const auto& m : e.members)
    for (size_t i = 0; i < stats.mean.size(); ++i) {
      const Eigen::Vector2d d(m.flows[i].u - stats.mean[i].u,
                              m.flows[i].v - stats.mean[i].v);
      stats.covariance[i] += d * d.transpose();
    }
  for (auto& c : stats.covariance) c /= e.n_members() - 1;
  return stats;
}

/// Continuous, divergence-free reference field: a latent vector over a
/// generating position set, evaluated through the incompressible kernel.
struct SyntheticTruth {
  std::vector<Position> positions;
  Eigen::VectorXd latent;  // length 2 * positions.size()
  KernelConfig kernel;

  FlowVector operator()(const Position& x) const {
    const Eigen::Vector2d f = cross_gram(x, std::span(positions), kernel) * latent;
    return {f(0), f(1)};
  }

  std::vector<FlowVector> at(std::span<const Position> xs) const {
    std::vector<FlowVector> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back((*this)(x));
    return out;
  }
};

struct SyntheticSpec {
  int n_members = 20;
  GridSpec grid{-10.0, 10.0, 13, -10.0, 10.0, 13};
  int n_modes = 3;
  double mode_spread = 1.0;   // std-dev of member mode coefficients
  double noise_scale = 0.0;   // RMS amplitude of per-member smooth noise fields
};

struct SyntheticEnsemble {
  EnsembleForecast forecast;
  SyntheticTruth truth;
  Eigen::MatrixXd mode_latents;    // 2N_V x n_modes, scaled generating latents
  Eigen::MatrixXd mode_fields;     // 2N_V x n_modes, vectorized flows at grid
  Eigen::MatrixXd member_latents;  // 2N_V x N_E, exact generating latents
};

namespace detail {

inline Eigen::VectorXd sparse_center_latent(int n_positions, int n_centers,
                                            std::mt19937_64& rng) {
  std::vector<int> all(n_positions);
  for (int i = 0; i < n_positions; ++i) all[i] = i;
  std::vector<int> centers;
  std::sample(all.begin(), all.end(), std::back_inserter(centers),
              static_cast<size_t>(n_centers), rng);
  std::normal_distribution<double> normal;
  Eigen::VectorXd latent = Eigen::VectorXd::Zero(2 * n_positions);
  for (int c : centers) {
    latent(2 * c) = normal(rng);
    latent(2 * c + 1) = normal(rng);
  }
  return latent;
}

inline double scalar_rms(const Eigen::VectorXd& v) {
  return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

}  // namespace detail

/// Generates an ensemble whose members are random combinations of n_modes
/// generating flow fields (orthonormal latents with 2x amplitude decay per
/// mode, unit field RMS before decay), plus an independent smooth noise field
/// per member. The truth is one further combination of the same modes, so its
/// flow pattern lies in the generating span. Deterministic per seed.
inline SyntheticEnsemble generate_synthetic_ensemble(uint64_t seed,
                                                     const SyntheticSpec& spec,
                                                     const KernelConfig& cfg) {
  cfg.validate();
  if (!spec.grid.valid() || spec.grid.size() < 2)
    throw ValidationError("synthetic ensemble requires a non-degenerate grid");
  if (spec.n_members < 1) throw ValidationError("n_members must be >= 1");
  if (spec.n_modes < 1) throw ValidationError("n_modes must be >= 1");
  if (spec.n_modes > spec.n_members)
    throw ValidationError(
        "n_modes must not exceed n_members (the generating rank would exceed "
        "the member count)");
  if (spec.mode_spread < 0.0 || spec.noise_scale < 0.0)
    throw ValidationError("mode_spread and noise_scale must be non-negative");

  SyntheticEnsemble out;
  out.forecast.positions = spec.grid.points();
  const int n_v = spec.grid.size();
  const Eigen::MatrixXd g =
      gram(std::span(out.forecast.positions), std::span(out.forecast.positions), cfg);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const int n_centers = std::min(8, n_v);

  // Orthonormal generating latents with fixed 2x amplitude decay per mode.
  out.mode_latents.resize(2 * n_v, spec.n_modes);
  out.mode_fields.resize(2 * n_v, spec.n_modes);
  for (int m = 0; m < spec.n_modes; ++m) {
    Eigen::VectorXd latent;
    double norm = 0.0;
    do {
      latent = detail::sparse_center_latent(n_v, n_centers, rng);
      for (int p = 0; p < m; ++p)
        latent -= out.mode_latents.col(p).dot(latent) /
                  out.mode_latents.col(p).squaredNorm() * out.mode_latents.col(p);
      norm = latent.norm();
    } while (norm < 1e-10);
    latent /= norm;
    const Eigen::VectorXd field = g * latent;
    const double amplitude = std::pow(2.0, -m) / detail::scalar_rms(field);
    out.mode_latents.col(m) = amplitude * latent;
    out.mode_fields.col(m) = amplitude * field;
  }

  out.member_latents.resize(2 * n_v, spec.n_members);
  for (int i = 0; i < spec.n_members; ++i) {
    Eigen::VectorXd latent = Eigen::VectorXd::Zero(2 * n_v);
    for (int m = 0; m < spec.n_modes; ++m)
      latent += spec.mode_spread * normal(rng) * out.mode_latents.col(m);
    if (spec.noise_scale > 0.0) {
      Eigen::VectorXd noise = detail::sparse_center_latent(n_v, n_centers, rng);
      noise /= detail::scalar_rms(g * noise);
      latent += spec.noise_scale * noise;
    }
    out.member_latents.col(i) = latent;
    std::string id = "m" + std::to_string(i);
    out.forecast.members.push_back({std::move(id), devectorize(g * latent)});
  }

  Eigen::VectorXd truth_latent = Eigen::VectorXd::Zero(2 * n_v);
  for (int m = 0; m < spec.n_modes; ++m)
    truth_latent += spec.mode_spread * normal(rng) * out.mode_latents.col(m);
  out.truth = {out.forecast.positions, std::move(truth_latent), cfg};

  out.forecast.metadata["source"] = "synthetic";
  out.forecast.metadata["seed"] = seed;
  out.forecast.validate();
  return out;
}

}  // namespace flowcast
