#pragma once

// Bag-to-instance label correction: contiguous foreground predictions form a
// pseudo-positive bag; when one class holds a strict share above the witness
// rate threshold, every instance of the bag takes that class.

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

#include "edrnet/avedata.hpp"
#include "edrnet/tensor.hpp"

namespace edr {

struct PredictionSequence {
  std::vector<int> hard;
  Tensor<float> probs;  // N x C, optional

  static PredictionSequence from_probs(const Tensor<float>& probs) {
    PredictionSequence p;
    p.probs = probs;
    for (std::size_t t = 0; t < probs.rows(); ++t) {
      const auto row = probs.row(t);
      p.hard.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return p;
  }
};

struct Bag {
  int first = 0;
  int last = 0;
  std::map<int, int> counts;
  int length() const { return last - first + 1; }
};

struct WitnessRate {
  std::optional<int> dominant;  // empty when the top count is tied
  double rate = 0.0;            // top count / bag length
};

inline std::vector<Bag> form_bags(const std::vector<int>& hard, int background = kBackground) {
  std::vector<Bag> bags;
  const int n = static_cast<int>(hard.size());
  for (int t = 0; t < n; ++t) {
    if (hard[t] == background) continue;
    Bag b{t, t, {}};
    while (b.last + 1 < n && hard[b.last + 1] != background) ++b.last;
    for (int i = b.first; i <= b.last; ++i) ++b.counts[hard[i]];
    t = b.last;
    bags.push_back(std::move(b));
  }
  return bags;
}

inline WitnessRate witness_rate(const Bag& bag) {
  int best = -1, best_count = 0;
  bool tied = false;
  for (const auto& [cls, count] : bag.counts) {
    if (count > best_count) {
      best = cls;
      best_count = count;
      tied = false;
    } else if (count == best_count) {
      tied = true;
    }
  }
  WitnessRate wr;
  wr.rate = bag.length() > 0 ? static_cast<double>(best_count) / bag.length() : 0.0;
  if (!tied && best >= 0) wr.dominant = best;
  return wr;
}

/// Relabels bags whose dominant class has a witness rate strictly above
/// `threshold`. Probabilities are passed through untouched.
inline PredictionSequence correct(const PredictionSequence& preds, double threshold = 0.5,
                                  int background = kBackground) {
  PredictionSequence out = preds;
  for (const auto& bag : form_bags(preds.hard, background)) {
    const auto wr = witness_rate(bag);
    if (!wr.dominant || !(wr.rate > threshold)) continue;
    for (int t = bag.first; t <= bag.last; ++t) out.hard[t] = *wr.dominant;
  }
  return out;
}

inline std::vector<int> correct(const std::vector<int>& hard, double threshold = 0.5,
                                int background = kBackground) {
  return correct(PredictionSequence{hard, {}}, threshold, background).hard;
}

}  // namespace edr
