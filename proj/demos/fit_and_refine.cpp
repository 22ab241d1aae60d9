// SPDX-License-Identifier: Apache-2.0
//
// End-to-end walkthrough: generate a synthetic ensemble forecast, compress it
// into a low-rank flow-field model, refine the weights with a handful of
// simulated measurements, and print how the error shrinks.

#include <iostream>
#include <random>
#include <span>

#include <flowcast/flowcast.hpp>

int main() {
  using namespace flowcast;

  KernelConfig kernel{2.0, 1.0, 1e-8};
  SyntheticSpec spec;
  spec.n_members = 20;
  spec.n_modes = 3;
  spec.noise_scale = 0.05;
  const SyntheticEnsemble synth = generate_synthetic_ensemble(7, spec, kernel);

  const CompressionResult comp =
      compress(fit_all(synth.forecast, kernel),
               std::span(synth.forecast.positions), kernel);
  std::cout << "compressed " << synth.forecast.n_members() << " members to rank "
            << comp.model.n_modes() << " (relative truncation error "
            << comp.truncation_error << ")\n";

  EstimatorState state = init_from_ensemble(comp.model);
  const SyntheticTruthField truth(synth.truth);
  std::vector<FlowVector> truth_flows;
  for (const auto& p : synth.forecast.positions) truth_flows.push_back(truth.at(p));

  const auto field_rms = [&](const EstimatorState& s) {
    std::vector<FlowVector> field;
    for (const auto& p : synth.forecast.positions)
      field.push_back(query(s, comp.model, p).mean);
    return rms_error(std::span(field), std::span(truth_flows));
  };
  std::cout << "prior RMS error: " << field_rms(state) << "\n";

  PolicyConfig policy;
  policy.kind = PolicyKind::active;
  policy.candidates = spec.grid;
  std::mt19937_64 rng(policy.seed);
  const Eigen::Matrix2d sigma = 1e-3 * Eigen::Matrix2d::Identity();
  for (int k = 1; k <= 8; ++k) {
    const Position x = next_measurement_position(policy, state, comp.model, rng);
    update(state, comp.model, simulate_measurement(truth, x, sigma, rng));
    std::cout << "after measurement " << k << " at (" << x.x << ", " << x.y
              << "): RMS " << field_rms(state) << "\n";
  }
  return 0;
}
