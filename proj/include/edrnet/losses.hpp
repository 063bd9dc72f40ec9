#pragma once

// Segment cross-entropy, the land / sea / shore patch losses over the gated
// features, and the supervised / weakly supervised objectives. Every loss can
// accumulate `scale * dLoss/dInput` into an optional gradient tensor.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "edrnet/avedata.hpp"
#include "edrnet/edrnet.hpp"
#include "edrnet/tensor.hpp"

namespace edr {

inline constexpr double kLogEps = 1e-12;

struct Span {
  int first = 0;
  int last = 0;
  int length() const { return last - first + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Shore {
  int index = 0;  // the border segment, first or last of `land`
  Span land;
  Span sea;
  friend bool operator==(const Shore&, const Shore&) = default;
};

/// Lands are maximal single-class foreground runs, seas maximal background
/// runs, shores the land endpoints that touch a sea.
struct PatchPartition {
  std::vector<Span> lands;
  std::vector<Span> seas;
  std::vector<Shore> shores;
  friend bool operator==(const PatchPartition&, const PatchPartition&) = default;
};

inline PatchPartition partition_patches(const std::vector<int>& labels, int background = kBackground) {
  PatchPartition p;
  const int n = static_cast<int>(labels.size());
  std::vector<int> sea_of(n, -1);
  for (int t = 0; t < n;) {
    int end = t;
    while (end + 1 < n && labels[end + 1] == labels[t]) ++end;
    if (labels[t] == background) {
      // Adjacent background labels are always equal, so this run is maximal.
      for (int i = t; i <= end; ++i) sea_of[i] = static_cast<int>(p.seas.size());
      p.seas.push_back({t, end});
    } else {
      p.lands.push_back({t, end});
    }
    t = end + 1;
  }
  for (const auto& land : p.lands) {
    if (land.first > 0 && sea_of[land.first - 1] >= 0)
      p.shores.push_back({land.first, land, p.seas[sea_of[land.first - 1]]});
    if (land.last + 1 < n && sea_of[land.last + 1] >= 0)
      p.shores.push_back({land.last, land, p.seas[sea_of[land.last + 1]]});
  }
  return p;
}

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  double margin = 0.2;  // shore triplet margin alpha

  void validate() const {
    for (double v : {lambda1, lambda2, margin})
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument("loss weights must be finite and nonnegative");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

namespace detail {

template <typename T>
std::vector<T> mean_rows(const Tensor<T>& f, int first, int count) {
  std::vector<T> m(f.cols(), T{});
  for (int t = first; t < first + count; ++t)
    for (std::size_t i = 0; i < f.cols(); ++i) m[i] += f(t, i);
  for (auto& v : m) v /= static_cast<T>(count);
  return m;
}

template <typename T>
T l2(const std::vector<T>& a, const std::vector<T>& b) {
  T s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

template <typename T>
void add_scaled_rows(Tensor<T>& g, int first, int count, const std::vector<T>& dir, T scale) {
  for (int t = first; t < first + count; ++t)
    for (std::size_t i = 0; i < g.cols(); ++i) g(t, i) += scale * dir[i];
}

}  // namespace detail

/// Mean over patches of length >= 2 of ||mean(first half) - mean(second half)||,
/// first half = floor(len / 2) segments.
template <typename T>
T half_split_loss(const Tensor<T>& f, const std::vector<Span>& patches, Tensor<T>* grad = nullptr,
                  T scale = T{1}) {
  std::vector<const Span*> eligible;
  for (const auto& s : patches)
    if (s.length() >= 2) eligible.push_back(&s);
  if (eligible.empty()) return T{};
  const T inv = T{1} / static_cast<T>(eligible.size());
  T total{};
  for (const Span* s : eligible) {
    const int h = s->length() / 2;
    const int rest = s->length() - h;
    const auto m1 = detail::mean_rows(f, s->first, h);
    const auto m2 = detail::mean_rows(f, s->first + h, rest);
    const T dist = detail::l2(m1, m2);
    total += dist;
    if (grad && dist > T{}) {
      std::vector<T> u(m1.size());
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = (m1[i] - m2[i]) / dist;
      detail::add_scaled_rows(*grad, s->first, h, u, scale * inv / static_cast<T>(h));
      detail::add_scaled_rows(*grad, s->first + h, rest, u, -scale * inv / static_cast<T>(rest));
    }
  }
  return total * inv;
}

template <typename T>
T land_loss(const Tensor<T>& f, const PatchPartition& p, Tensor<T>* grad = nullptr, T scale = T{1}) {
  return half_split_loss(f, p.lands, grad, scale);
}

template <typename T>
T sea_loss(const Tensor<T>& f, const PatchPartition& p, Tensor<T>* grad = nullptr, T scale = T{1}) {
  return half_split_loss(f, p.seas, grad, scale);
}

/// Triplet hinge per shore: anchor = shore row, positive = mean of the rest of
/// its land, negative = mean of the adjacent sea.
template <typename T>
T shore_loss(const Tensor<T>& f, const PatchPartition& p, T margin, Tensor<T>* grad = nullptr,
             T scale = T{1}) {
  std::vector<const Shore*> eligible;
  for (const auto& s : p.shores)
    if (s.land.length() >= 2) eligible.push_back(&s);
  if (eligible.empty()) return T{};
  const T inv = T{1} / static_cast<T>(eligible.size());
  const std::size_t d = f.cols();
  T total{};
  for (const Shore* s : eligible) {
    std::vector<T> land_mean(d, T{});
    for (int t = s->land.first; t <= s->land.last; ++t)
      if (t != s->index)
        for (std::size_t i = 0; i < d; ++i) land_mean[i] += f(t, i);
    const int land_count = s->land.length() - 1;
    for (auto& v : land_mean) v /= static_cast<T>(land_count);
    const auto sea_mean = detail::mean_rows(f, s->sea.first, s->sea.length());
    std::vector<T> anchor(f.row(s->index).begin(), f.row(s->index).end());
    const T dp = detail::l2(anchor, land_mean);
    const T dn = detail::l2(anchor, sea_mean);
    const T hinge = dp - dn + margin;
    if (!(hinge > T{})) continue;
    total += hinge;
    if (!grad) continue;
    std::vector<T> up(d, T{}), un(d, T{});
    for (std::size_t i = 0; i < d; ++i) {
      if (dp > T{}) up[i] = (anchor[i] - land_mean[i]) / dp;
      if (dn > T{}) un[i] = (anchor[i] - sea_mean[i]) / dn;
    }
    const T w = scale * inv;
    for (std::size_t i = 0; i < d; ++i) (*grad)(s->index, i) += w * (up[i] - un[i]);
    for (int t = s->land.first; t <= s->land.last; ++t)
      if (t != s->index)
        for (std::size_t i = 0; i < d; ++i) (*grad)(t, i) -= w * up[i] / static_cast<T>(land_count);
    detail::add_scaled_rows(*grad, s->sea.first, s->sea.length(), un, w / static_cast<T>(s->sea.length()));
  }
  return total * inv;
}

template <typename T>
T lss_loss(const Tensor<T>& f, const PatchPartition& p, T margin, Tensor<T>* grad = nullptr,
           T scale = T{1}) {
  return land_loss(f, p, grad, scale) + sea_loss(f, p, grad, scale) + shore_loss(f, p, margin, grad, scale);
}

/// Mean over segments of -log(max(yhat_t[y_t], eps)); the gradient is taken
/// with respect to the probabilities.
template <typename T>
T seg_ce_loss(const Tensor<T>& probs, const std::vector<int>& labels, Tensor<T>* grad = nullptr,
              T scale = T{1}) {
  if (probs.rows() != labels.size()) throw std::invalid_argument("seg_ce_loss: label count mismatch");
  const T n = static_cast<T>(labels.size());
  const T eps = static_cast<T>(kLogEps);
  T total{};
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const T p = probs(t, static_cast<std::size_t>(labels[t]));
    total -= std::log(std::max(p, eps));
    if (grad && p > eps) (*grad)(t, static_cast<std::size_t>(labels[t])) -= scale / (n * p);
  }
  return total / n;
}

/// -log(max(yhat[y], eps)) for a pooled video prediction.
template <typename T>
T wsel_objective(const std::vector<T>& video_probs, int label) {
  return -std::log(std::max(video_probs.at(static_cast<std::size_t>(label)), static_cast<T>(kLogEps)));
}

/// Same objective evaluated from the segment rows so that its gradient with
/// respect to each row can be accumulated (mean pooling spreads it as 1/N).
template <typename T>
T wsel_objective(const Tensor<T>& probs, int label, Tensor<T>* grad = nullptr, T scale = T{1}) {
  const auto pooled = mil_pool(probs);
  const T p = pooled.at(static_cast<std::size_t>(label));
  if (grad && p > static_cast<T>(kLogEps)) {
    const T g = -scale / (static_cast<T>(probs.rows()) * p);
    for (std::size_t t = 0; t < probs.rows(); ++t) (*grad)(t, static_cast<std::size_t>(label)) += g;
  }
  return wsel_objective(pooled, label);
}

/// lambda1 * seg CE + lambda2 * LSS, with the patches taken from `labels`.
template <typename T>
T sel_objective(const Tensor<T>& probs, const std::vector<int>& labels, const Tensor<T>& features,
                const LossWeights& w, OutputGrads<T>* grads = nullptr, int background = kBackground) {
  const T l1 = static_cast<T>(w.lambda1), l2w = static_cast<T>(w.lambda2);
  T total{};
  if (l1 != T{}) total += l1 * seg_ce_loss(probs, labels, grads ? &grads->probs : nullptr, l1);
  if (l2w != T{}) {
    const auto part = partition_patches(labels, background);
    total += l2w * lss_loss(features, part, static_cast<T>(w.margin), grads ? &grads->features : nullptr, l2w);
  }
  return total;
}

}  // namespace edr
