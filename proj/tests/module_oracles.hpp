#pragma once

// Random tiny instances of the network modules, each compared against the
// direct-summation oracles.

#include <algorithm>
#include <random>

#include "oracles.hpp"

namespace module_check {

enum class Module { decompose, recompose, gate, spatial_encode };

inline const char* name(Module m) {
  switch (m) {
    case Module::decompose: return "decompose";
    case Module::recompose: return "recompose";
    case Module::gate: return "gate";
    case Module::spatial_encode: return "spatial_encode";
  }
  return "?";
}

inline constexpr Module kAll[] = {Module::decompose, Module::recompose, Module::gate, Module::spatial_encode};

/// Random config with random (not initialiser-shaped) parameters.
inline std::pair<edr::EdrConfig, edr::ModelParams<double>> random_instance(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  edr::EdrConfig c;
  c.k = pick(2, 5);
  c.layers = pick(1, edr::max_layers(c.k, c.segments));
  c.width = pick(2, 6);
  c.audio_dim = pick(1, 5);
  c.visual_dim = pick(1, 5);
  const int sides[] = {1, 2, 3};
  const int side = sides[pick(0, 2)];
  c.spatial = side * side;
  c.spatial_kernel = side == 1 ? 1 : 3;
  c.classes = pick(2, 6);
  const edr::BranchSet sets[] = {{true, true, true}, {true, false, true}, {false, true, true},
                                 {true, true, false}, {true, false, false}};
  c.branches = sets[pick(0, 4)];
  c.seed = rng();
  auto params = edr::ModelParams<double>::init(c);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  params.for_each([&](const std::string&, edr::Tensor<double>& t) {
    for (auto& v : t.values()) v = u(rng);
  });
  return {c, std::move(params)};
}

/// Largest absolute deviation from the oracle over `instances` random cases.
inline double worst_error(Module m, int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const auto [c, params] = random_instance(rng);
    const std::size_t n = static_cast<std::size_t>(c.segments);
    const auto audio = oracle::random_tensor({n, std::size_t(c.audio_dim)}, rng);
    const auto visual = oracle::random_tensor({n, std::size_t(c.spatial), std::size_t(c.visual_dim)}, rng);
    const auto in = edr::encode_inputs(audio, visual, params, c);
    switch (m) {
      case Module::spatial_encode: {
        if (!c.uses_visual()) break;
        const auto got = edr::spatial_encode(visual, params.spatial, c).second;
        worst = std::max(worst, oracle::max_abs_diff(got, oracle::spatial_encode(visual, params.spatial)));
        break;
      }
      case Module::decompose:
        for (edr::Branch b : edr::kBranches) {
          if (!c.branches.enabled(b)) continue;
          const auto got = edr::decompose(in.branch[edr::idx(b)], b, params, c);
          const auto want = oracle::decompose(in.branch[edr::idx(b)], params.decomposition[edr::idx(b)]);
          for (std::size_t l = 0; l < want.size(); ++l)
            worst = std::max(worst, oracle::max_abs_diff(got.at(l), want[l]));
        }
        break;
      case Module::recompose: {
        std::array<std::vector<edr::Tensor<double>>, 3> dec;
        for (edr::Branch b : edr::kBranches)
          if (c.branches.enabled(b)) dec[edr::idx(b)] = edr::decompose(in.branch[edr::idx(b)], b, params, c);
        const auto rec = edr::recompose(dec, params, c).second;
        const auto* fused = c.branches.fused ? &dec[edr::idx(edr::Branch::fused)] : nullptr;
        for (edr::Branch b : edr::kModalBranches) {
          if (!c.branches.enabled(b)) continue;
          const auto want = oracle::recompose(dec[edr::idx(b)], fused, params.recomposition[edr::idx(b)]);
          worst = std::max(worst, oracle::max_abs_diff(rec[edr::idx(b)].back(), want));
        }
        break;
      }
      case Module::gate: {
        if (!c.gated()) {
          // Gate weights only exist with both modal branches; force them on.
          auto g = c;
          g.branches = {true, true, c.branches.fused};
          auto gp = edr::ModelParams<double>::init(g);
          std::uniform_real_distribution<double> u(-1.0, 1.0);
          for (auto& v : gp.gate.weight.values()) v = u(rng);
          for (auto& v : gp.gate.bias.values()) v = u(rng);
          const auto ra = oracle::random_tensor({n, std::size_t(g.width)}, rng, -3, 3);
          const auto rv = oracle::random_tensor({n, std::size_t(g.width)}, rng, -3, 3);
          worst = std::max(worst, oracle::max_abs_diff(edr::gate(ra, rv, gp.gate), oracle::gate(ra, rv, gp.gate)));
          break;
        }
        const auto ra = oracle::random_tensor({n, std::size_t(c.width)}, rng, -3, 3);
        const auto rv = oracle::random_tensor({n, std::size_t(c.width)}, rng, -3, 3);
        worst = std::max(worst, oracle::max_abs_diff(edr::gate(ra, rv, params.gate), oracle::gate(ra, rv, params.gate)));
        break;
      }
    }
  }
  return worst;
}

}  // namespace module_check
