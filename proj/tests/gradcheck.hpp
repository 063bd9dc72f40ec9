#pragma once

// Finite-difference check of the analytic parameter gradients of the network
// objectives, shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace gradcheck {

enum class Objective { seg_ce, land, sea, shore, sel, wsel };

inline const char* name(Objective o) {
  switch (o) {
    case Objective::seg_ce: return "seg CE";
    case Objective::land: return "land";
    case Objective::sea: return "sea";
    case Objective::shore: return "shore";
    case Objective::sel: return "combined SEL";
    case Objective::wsel: return "WSEL";
  }
  return "?";
}

inline constexpr Objective kAll[] = {Objective::seg_ce, Objective::land, Objective::sea,
                                     Objective::shore,  Objective::sel,  Objective::wsel};

/// Scalar objective of one video and optionally its parameter gradient.
inline double evaluate(Objective o, const edr::VideoRecord& r, const edr::ModelParams<double>& params,
                       const edr::EdrConfig& cfg, edr::ModelParams<double>* grads) {
  const auto acts = edr::forward(r, params, cfg);
  edr::OutputGrads<double> og{edr::Tensor<double>(acts.probs.shape()), edr::Tensor<double>(acts.features.shape())};
  const int bg = cfg.classes - 1;
  const auto part = edr::partition_patches(r.seg_labels, bg);
  const double margin = 0.2;
  double loss = 0;
  switch (o) {
    case Objective::seg_ce: loss = edr::seg_ce_loss(acts.probs, r.seg_labels, &og.probs); break;
    case Objective::land: loss = edr::land_loss(acts.features, part, &og.features); break;
    case Objective::sea: loss = edr::sea_loss(acts.features, part, &og.features); break;
    case Objective::shore: loss = edr::shore_loss(acts.features, part, margin, &og.features); break;
    case Objective::sel:
      loss = edr::sel_objective(acts.probs, r.seg_labels, acts.features, edr::LossWeights{1.0, 0.5, margin}, &og, bg);
      break;
    case Objective::wsel: loss = edr::wsel_objective(acts.probs, r.video_label, &og.probs); break;
  }
  if (grads) *grads = edr::backward(cfg, params, acts, og);
  return loss;
}

struct Result {
  int sampled = 0;
  int passed = 0;
  int nonzero = 0;  // coordinates whose analytic gradient is not negligible
  double worst = 0.0;
  std::string worst_where;
  double pass_rate() const { return sampled ? double(passed) / sampled : 0.0; }
};

/// Samples `samples` coordinates (at least one per parameter tensor, the
/// rest uniformly over all coordinates) and compares analytic gradients with
/// central differences of step `h`.
inline Result check(Objective o, const edr::VideoRecord& r, edr::ModelParams<double> params,
                    const edr::EdrConfig& cfg, int samples = 500, double h = 1e-4, double tol = 1e-3,
                    std::uint64_t seed = 1) {
  edr::ModelParams<double> grads;
  evaluate(o, r, params, cfg, &grads);

  std::vector<std::pair<std::string, edr::Tensor<double>*>> tensors;
  params.for_each([&](const std::string& n, edr::Tensor<double>& t) { tensors.emplace_back(n, &t); });
  std::vector<const edr::Tensor<double>*> gts;
  grads.for_each([&](const std::string&, const edr::Tensor<double>& t) { gts.push_back(&t); });

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::mt19937_64 rng(seed);
  std::size_t total = 0;
  for (const auto& [n, t] : tensors) total += t->size();
  for (std::size_t i = 0; i < tensors.size() && static_cast<int>(coords.size()) < samples; ++i)
    coords.emplace_back(i, std::uniform_int_distribution<std::size_t>(0, tensors[i].second->size() - 1)(rng));
  while (static_cast<int>(coords.size()) < samples) {
    std::size_t flat = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng), i = 0;
    while (flat >= tensors[i].second->size()) flat -= tensors[i++].second->size();
    coords.emplace_back(i, flat);
  }

  Result res;
  for (const auto& [ti, j] : coords) {
    auto& x = (*tensors[ti].second)[j];
    const double numeric = oracle::central_difference([&] { return evaluate(o, r, params, cfg, nullptr); }, x, h);
    const double analytic = (*gts[ti])[j];
    const double err = oracle::relative_error(analytic, numeric, 1e-12);
    ++res.sampled;
    if (std::abs(analytic) > 1e-8) ++res.nonzero;
    if (err < tol) ++res.passed;
    if (err > res.worst) {
      res.worst = err;
      res.worst_where = tensors[ti].first + "[" + std::to_string(j) + "]";
    }
  }
  return res;
}

/// The configuration and record used by the gradient criterion: a small
/// five-class model and a video with one interior event so every loss term
/// (land, sea, both shores) is active.
inline edr::EdrConfig small_config(std::uint64_t seed = 3) {
  edr::EdrConfig c;
  c.width = 8;
  c.audio_dim = 4;
  c.visual_dim = 4;
  c.spatial = 4;
  c.k = 3;
  c.layers = 4;
  c.classes = 5;
  c.seed = seed;
  return c;
}

inline edr::VideoRecord small_record(const edr::EdrConfig& c, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  edr::VideoRecord r;
  r.id = "gradcheck";
  r.seg_labels = {4, 4, 2, 2, 2, 2, 2, 4, 4, 4};
  r.video_label = 2;
  r.audio = edr::Tensor<float>::matrix(10, c.audio_dim);
  r.visual = edr::Tensor<float>({10, std::size_t(c.spatial), std::size_t(c.visual_dim)});
  for (auto& v : r.audio.values()) v = n(rng);
  for (auto& v : r.visual.values()) v = n(rng);
  return r;
}

}  // namespace gradcheck
