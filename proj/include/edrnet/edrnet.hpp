#pragma once

// Event decomposition / recomposition network: spatial encoding, positional
// encoding, temporal decomposition per modal branch, recomposition with
// dual-phase fusion residuals, gating, segment classifier and MIL pooling,
// plus the matching backward pass and class activation maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "edrnet/avedata.hpp"
#include "edrnet/conv.hpp"
#include "edrnet/tensor.hpp"

namespace edr {

enum class Branch : int { audio = 0, visual = 1, fused = 2 };

inline constexpr std::array<Branch, 3> kBranches{Branch::audio, Branch::visual, Branch::fused};
inline constexpr std::array<Branch, 2> kModalBranches{Branch::audio, Branch::visual};

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::audio: return "A";
    case Branch::visual: return "V";
    case Branch::fused: return "AV";
  }
  return "?";
}

inline constexpr std::size_t idx(Branch b) { return static_cast<std::size_t>(b); }

struct BranchSet {
  bool audio = true;
  bool visual = true;
  bool fused = true;

  bool enabled(Branch b) const {
    switch (b) {
      case Branch::audio: return audio;
      case Branch::visual: return visual;
      case Branch::fused: return fused;
    }
    return false;
  }
  friend bool operator==(const BranchSet&, const BranchSet&) = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Largest layer count whose final decomposition length lies in (0, k).
inline int max_layers(int k, int n) {
  if (k < 2 || k > n)
    throw ConfigError("max_layers: k=" + std::to_string(k) + " outside [2, " + std::to_string(n) + "]");
  int layers = 0;
  int len = n;
  do {
    len -= k - 1;
    ++layers;
  } while (len >= k);
  return layers;
}

struct EdrConfig {
  int k = 3;           // temporal kernel size
  int layers = 4;      // decomposition/recomposition layers per phase
  int width = 768;     // hidden width of every temporal layer
  int segments = kSegments;
  int classes = kNumClasses;
  int audio_dim = 128;
  int visual_dim = 512;
  int spatial = 49;    // spatial positions per visual map (square grid)
  BranchSet branches;
  int spatial_kernel = 3;
  bool positional_encoding = true;
  std::uint64_t seed = 0;

  int grid_side() const { return static_cast<int>(std::lround(std::sqrt(double(spatial)))); }
  int length_at(int layer) const { return segments - layer * (k - 1); }
  bool gated() const { return branches.audio && branches.visual; }
  bool uses_visual() const { return branches.visual || branches.fused; }

  int input_width(Branch b) const {
    switch (b) {
      case Branch::audio: return audio_dim;
      case Branch::visual: return visual_dim;
      case Branch::fused: return audio_dim + visual_dim;
    }
    return 0;
  }

  void validate() const {
    if (segments < 2) throw ConfigError("N must be >= 2");
    if (k < 2 || k > segments) throw ConfigError("k must lie in [2, N]");
    const int lmax = max_layers(k, segments);
    if (layers < 1 || layers > lmax)
      throw ConfigError("L=" + std::to_string(layers) + " outside [1, L_max=" + std::to_string(lmax) + "]");
    if (width < 1 || classes < 2 || audio_dim < 1 || visual_dim < 1)
      throw ConfigError("widths and class count must be positive");
    if (spatial < 1 || grid_side() * grid_side() != spatial)
      throw ConfigError("S=" + std::to_string(spatial) + " is not a perfect square");
    if (spatial_kernel < 1) throw ConfigError("spatial kernel must be >= 1");
    if (!branches.audio && !branches.visual)
      throw ConfigError("at least one of the A and V branches must be enabled");
  }

  friend bool operator==(const EdrConfig&, const EdrConfig&) = default;
};

template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Every learnable tensor of the network. Disabled branches leave their
/// slots empty.
template <typename T>
struct ModelParams {
  ConvParams<T> spatial;                                  // [d_v][d_v][K][K]
  std::array<std::vector<ConvParams<T>>, 3> decomposition;  // [d][in][k]
  std::array<std::vector<ConvParams<T>>, 2> recomposition;  // [d][d][k]
  ConvParams<T> gate;                                     // [d][2d][k]
  ConvParams<T> classifier;                               // weight d x C, bias C

  /// Zero tensors with the shapes implied by `cfg`.
  static ModelParams zeros(const EdrConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.width);
    const auto k = static_cast<std::size_t>(cfg.k);
    ModelParams p;
    if (cfg.uses_visual()) {
      const auto dv = static_cast<std::size_t>(cfg.visual_dim);
      const auto kk = static_cast<std::size_t>(cfg.spatial_kernel);
      p.spatial = {Tensor<T>({dv, dv, kk, kk}), Tensor<T>({dv})};
    }
    for (Branch b : kBranches) {
      if (!cfg.branches.enabled(b)) continue;
      for (int l = 1; l <= cfg.layers; ++l) {
        const std::size_t in = l == 1 ? static_cast<std::size_t>(cfg.input_width(b)) : d;
        p.decomposition[idx(b)].push_back({Tensor<T>({d, in, k}), Tensor<T>({d})});
      }
    }
    for (Branch b : kModalBranches) {
      if (!cfg.branches.enabled(b)) continue;
      for (int l = 1; l <= cfg.layers; ++l)
        p.recomposition[idx(b)].push_back({Tensor<T>({d, d, k}), Tensor<T>({d})});
    }
    if (cfg.gated()) p.gate = {Tensor<T>({d, 2 * d, k}), Tensor<T>({d})};
    p.classifier = {Tensor<T>({d, static_cast<std::size_t>(cfg.classes)}),
                    Tensor<T>({static_cast<std::size_t>(cfg.classes)})};
    return p;
  }

  /// Fan-in scaled uniform weights drawn from `cfg.seed`; biases start at zero.
  static ModelParams init(const EdrConfig& cfg) {
    ModelParams p = zeros(cfg);
    std::mt19937_64 rng(cfg.seed);
    auto fill = [&](Tensor<T>& w, std::size_t fan_in, double gain) {
      const double bound = std::sqrt(gain / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : w.values()) v = static_cast<T>(u(rng));
    };
    if (!p.spatial.weight.empty())
      fill(p.spatial.weight, p.spatial.weight.size() / p.spatial.weight.dim(0), 6.0);
    for (auto& layers : p.decomposition)
      for (auto& c : layers) fill(c.weight, c.weight.dim(1) * c.weight.dim(2), 6.0);
    for (auto& layers : p.recomposition)
      for (auto& c : layers) fill(c.weight, c.weight.dim(0) * c.weight.dim(2), 6.0);
    if (!p.gate.weight.empty()) fill(p.gate.weight, p.gate.weight.dim(1) * p.gate.weight.dim(2), 3.0);
    fill(p.classifier.weight, p.classifier.weight.dim(0), 3.0);
    return p;
  }

  /// Visits (name, tensor) for every present tensor in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    auto conv = [](const ConvParams<T>& c) {
      return ConvParams<U>{c.weight.template cast<U>(), c.bias.template cast<U>()};
    };
    out.spatial = conv(spatial);
    for (std::size_t b = 0; b < 3; ++b)
      for (const auto& c : decomposition[b]) out.decomposition[b].push_back(conv(c));
    for (std::size_t b = 0; b < 2; ++b)
      for (const auto& c : recomposition[b]) out.recomposition[b].push_back(conv(c));
    out.gate = conv(gate);
    out.classifier = conv(classifier);
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    bool same = a.count() == b.count();
    std::vector<const Tensor<T>*> rhs;
    b.for_each([&](const std::string&, const Tensor<T>& t) { rhs.push_back(&t); });
    std::size_t i = 0;
    a.for_each([&](const std::string&, const Tensor<T>& t) {
      same = same && i < rhs.size() && t == *rhs[i];
      ++i;
    });
    return same && i == rhs.size();
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    auto conv = [&](const std::string& name, auto& c) {
      if (c.weight.empty()) return;
      f(name + ".weight", c.weight);
      f(name + ".bias", c.bias);
    };
    conv("spatial", self.spatial);
    for (Branch b : kBranches)
      for (std::size_t l = 0; l < self.decomposition[idx(b)].size(); ++l)
        conv(std::string("dec.") + branch_name(b) + "." + std::to_string(l + 1),
             self.decomposition[idx(b)][l]);
    for (Branch b : kModalBranches)
      for (std::size_t l = 0; l < self.recomposition[idx(b)].size(); ++l)
        conv(std::string("rec.") + branch_name(b) + "." + std::to_string(l + 1),
             self.recomposition[idx(b)][l]);
    conv("gate", self.gate);
    conv("classifier", self.classifier);
  }
};

/// Parameter count of one decomposition branch, from the config alone.
inline std::size_t decomposition_branch_size(const EdrConfig& cfg, Branch b) {
  const std::size_t d = cfg.width, k = cfg.k;
  std::size_t n = d * static_cast<std::size_t>(cfg.input_width(b)) * k + d;
  n += static_cast<std::size_t>(cfg.layers - 1) * (d * d * k + d);
  return n;
}

template <typename T>
struct Activations {
  Tensor<T> visual_input;   // N x S x d_v
  Tensor<T> visual_maps;    // N x S x d_v, after 2-D conv + ReLU, before GAP
  Tensor<T> visual_pooled;  // N x d_v
  std::array<std::vector<Tensor<T>>, 3> dec;     // D^0..D^L per branch
  std::array<std::vector<Tensor<T>>, 2> rec_in;  // input of recomposition layer l (index l-1)
  std::array<std::vector<Tensor<T>>, 2> rec;     // R^1..R^L (index l-1)
  Tensor<T> gate;      // G; empty unless both modal branches are on
  Tensor<T> features;  // gated R_AV^G, or R^L of the single enabled modal branch
  Tensor<T> logits;    // N x C
  Tensor<T> probs;     // N x C
  std::vector<T> video_probs;  // C
};

// ---------------------------------------------------------------------------
// Forward components

/// Sinusoidal code with t = 1..n; column 2m holds sin(w_m t), column 2m+1
/// holds cos(w_m t), w_m = 10^(-8m / width).
template <typename T>
Tensor<T> positional_encoding(std::size_t n, std::size_t width) {
  if (width < 2) throw std::invalid_argument("positional_encoding: width must be >= 2");
  auto pe = Tensor<T>::matrix(n, width);
  for (std::size_t t = 1; t <= n; ++t)
    for (std::size_t i = 0; i < width; ++i) {
      const std::size_t m = i / 2;
      const double omega = std::pow(10.0, -8.0 * static_cast<double>(m) / static_cast<double>(width));
      const double arg = omega * static_cast<double>(t);
      pe(t - 1, i) = static_cast<T>(i % 2 == 0 ? std::sin(arg) : std::cos(arg));
    }
  return pe;
}

/// Per segment: same-padded 2-D conv + ReLU, then global average pooling.
/// Returns {pre-pooling maps (N x S x d_v), pooled features (N x d_v)}.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> spatial_encode(const Tensor<T>& visual, const ConvParams<T>& conv,
                                               const EdrConfig& cfg) {
  const std::size_t n = visual.dim(0), s = visual.dim(1), dv = visual.dim(2);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(s))));
  if (side * side != s) throw ConfigError("spatial_encode: S=" + std::to_string(s) + " is not square");
  if (static_cast<int>(dv) != cfg.visual_dim) throw ConfigError("spatial_encode: d_v mismatch");
  Tensor<T> maps(visual.shape());
  auto pooled = Tensor<T>::matrix(n, dv);
  for (std::size_t t = 0; t < n; ++t) {
    const Tensor<T> seg({s, dv}, std::vector<T>(visual.row(t).begin(), visual.row(t).end()));
    auto y = conv2d_same(seg, side, conv.weight, conv.bias);
    relu_inplace(y);
    std::copy(y.values().begin(), y.values().end(), maps.row(t).begin());
    for (std::size_t p = 0; p < s; ++p)
      for (std::size_t c = 0; c < dv; ++c) pooled(t, c) += y(p, c);
    for (std::size_t c = 0; c < dv; ++c) pooled(t, c) /= static_cast<T>(s);
  }
  return {std::move(maps), std::move(pooled)};
}

/// D^0 = x0; D^l = ReLU(valid conv1d(D^(l-1))). Returns D^0..D^L.
template <typename T>
std::vector<Tensor<T>> decompose(const Tensor<T>& x0, Branch b, const ModelParams<T>& params,
                                 const EdrConfig& cfg) {
  if (!cfg.branches.enabled(b))
    throw ConfigError(std::string("decompose: branch ") + branch_name(b) + " is disabled");
  if (cfg.layers > max_layers(cfg.k, static_cast<int>(x0.rows())))
    throw ConfigError("decompose: L exceeds L_max for this sequence length");
  const auto& layers = params.decomposition[idx(b)];
  std::vector<Tensor<T>> out{x0};
  for (const auto& layer : layers) {
    auto y = conv1d(out.back(), layer.weight, layer.bias);
    relu_inplace(y);
    out.push_back(std::move(y));
  }
  return out;
}

/// Recomposition of each enabled modal branch. The layer-1 input is
/// D_b^L + D_AV^L; layer l >= 2 adds R^(l-1) + D_b^(L-l+1) + D_AV^(L-l+1).
/// Returns per modal branch the layer inputs and the outputs R^1..R^L.
template <typename T>
std::pair<std::array<std::vector<Tensor<T>>, 2>, std::array<std::vector<Tensor<T>>, 2>> recompose(
    const std::array<std::vector<Tensor<T>>, 3>& dec, const ModelParams<T>& params,
    const EdrConfig& cfg) {
  std::array<std::vector<Tensor<T>>, 2> inputs, outputs;
  const int L = cfg.layers;
  const auto& fused = dec[idx(Branch::fused)];
  for (Branch b : kModalBranches) {
    if (!cfg.branches.enabled(b)) continue;
    const auto& own = dec[idx(b)];
    if (static_cast<int>(own.size()) != L + 1) throw ConfigError("recompose: missing decomposition");
    for (int l = 1; l <= L; ++l) {
      Tensor<T> in;
      if (l == 1) {
        in = own[L];
      } else {
        const int partner = L - l + 1;
        in = outputs[idx(b)].back();
        if (own[partner].shape() != in.shape())
          throw ConfigError("recompose: residual length mismatch at layer " + std::to_string(l));
        in += own[partner];
      }
      const int partner = l == 1 ? L : L - l + 1;
      if (!fused.empty()) {
        if (fused[partner].shape() != in.shape())
          throw ConfigError("recompose: AV residual length mismatch at layer " + std::to_string(l));
        in += fused[partner];
      }
      const auto& layer = params.recomposition[idx(b)][l - 1];
      auto y = conv1d_transpose(in, layer.weight, layer.bias);
      relu_inplace(y);
      inputs[idx(b)].push_back(std::move(in));
      outputs[idx(b)].push_back(std::move(y));
    }
  }
  return {std::move(inputs), std::move(outputs)};
}

inline std::size_t same_pad_left(std::size_t k) { return (k - 1) / 2; }

/// G = sigmoid(same-padded conv1d([R_A | R_V])).
template <typename T>
Tensor<T> gate(const Tensor<T>& ra, const Tensor<T>& rv, const ConvParams<T>& conv) {
  if (conv.weight.empty()) throw ConfigError("gate: gating requires both A and V branches");
  const std::size_t k = conv.weight.dim(2);
  auto z = conv1d(concat_cols(ra, rv), conv.weight, conv.bias, same_pad_left(k), k - 1 - same_pad_left(k));
  for (auto& v : z.values()) v = sigmoid(v);
  return z;
}

/// G * R_A + (1 - G) * R_V elementwise.
template <typename T>
Tensor<T> fuse_gated(const Tensor<T>& ra, const Tensor<T>& rv, const Tensor<T>& g) {
  ra.require_same_shape(rv, "fuse_gated");
  ra.require_same_shape(g, "fuse_gated");
  Tensor<T> out(ra.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g[i] * ra[i] + (T{1} - g[i]) * rv[i];
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p(logits.shape());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{};
    for (std::size_t c = 0; c < row.size(); ++c) sum += (p(t, c) = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < row.size(); ++c) p(t, c) /= sum;
  }
  return p;
}

/// Segment logits x W + b and their softmax rows.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> classify(const Tensor<T>& x, const ConvParams<T>& head) {
  const std::size_t n = x.rows(), d = x.cols(), c = head.weight.dim(1);
  if (head.weight.dim(0) != d) throw std::invalid_argument("classify: width mismatch");
  auto logits = Tensor<T>::matrix(n, c);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < c; ++j) {
      T acc = head.bias[j];
      for (std::size_t i = 0; i < d; ++i) acc += x(t, i) * head.weight(i, j);
      logits(t, j) = acc;
    }
  auto probs = softmax_rows(logits);
  return {std::move(logits), std::move(probs)};
}

/// Column mean of the segment probabilities.
template <typename T>
std::vector<T> mil_pool(const Tensor<T>& probs) {
  std::vector<T> out(probs.cols(), T{});
  for (std::size_t t = 0; t < probs.rows(); ++t)
    for (std::size_t c = 0; c < probs.cols(); ++c) out[c] += probs(t, c);
  for (auto& v : out) v /= static_cast<T>(probs.rows());
  return out;
}

/// Branch inputs before positional encoding: D_A^0 = f^A, D_V^0 = GAP(conv(f^V)),
/// D_AV^0 = [f^A, D_V^0].
template <typename T>
struct EncodedInputs {
  Tensor<T> visual_input;
  Tensor<T> visual_maps;
  Tensor<T> visual_pooled;
  std::array<Tensor<T>, 3> branch;
};

template <typename T>
EncodedInputs<T> encode_inputs(const Tensor<T>& audio, const Tensor<T>& visual,
                               const ModelParams<T>& params, const EdrConfig& cfg) {
  if (static_cast<int>(audio.rows()) != cfg.segments || static_cast<int>(audio.cols()) != cfg.audio_dim)
    throw ConfigError("forward: audio shape " + shape_string(audio.shape()) + " does not match config");
  if (visual.rank() != 3 || static_cast<int>(visual.dim(0)) != cfg.segments ||
      static_cast<int>(visual.dim(1)) != cfg.spatial || static_cast<int>(visual.dim(2)) != cfg.visual_dim)
    throw ConfigError("forward: visual shape " + shape_string(visual.shape()) + " does not match config");
  EncodedInputs<T> in;
  in.visual_input = visual;
  if (cfg.uses_visual()) std::tie(in.visual_maps, in.visual_pooled) = spatial_encode(visual, params.spatial, cfg);
  if (cfg.branches.audio) in.branch[idx(Branch::audio)] = audio;
  if (cfg.branches.visual) in.branch[idx(Branch::visual)] = in.visual_pooled;
  if (cfg.branches.fused) in.branch[idx(Branch::fused)] = concat_cols(audio, in.visual_pooled);
  return in;
}

/// Runs everything after input encoding. `add_pe` controls the positional
/// encoding addition to each branch's initial features.
template <typename T>
Activations<T> forward_encoded(EncodedInputs<T> in, const ModelParams<T>& params,
                               const EdrConfig& cfg, bool add_pe) {
  Activations<T> a;
  a.visual_input = std::move(in.visual_input);
  a.visual_maps = std::move(in.visual_maps);
  a.visual_pooled = std::move(in.visual_pooled);
  for (Branch b : kBranches) {
    if (!cfg.branches.enabled(b)) continue;
    Tensor<T> x0 = std::move(in.branch[idx(b)]);
    if (add_pe) x0 += positional_encoding<T>(x0.rows(), x0.cols());
    a.dec[idx(b)] = decompose(x0, b, params, cfg);
  }
  std::tie(a.rec_in, a.rec) = recompose(a.dec, params, cfg);
  if (cfg.gated()) {
    const auto& ra = a.rec[idx(Branch::audio)].back();
    const auto& rv = a.rec[idx(Branch::visual)].back();
    a.gate = gate(ra, rv, params.gate);
    a.features = fuse_gated(ra, rv, a.gate);
  } else {
    a.features = a.rec[idx(cfg.branches.audio ? Branch::audio : Branch::visual)].back();
  }
  std::tie(a.logits, a.probs) = classify(a.features, params.classifier);
  a.video_probs = mil_pool(a.probs);
  return a;
}

template <typename T>
Activations<T> forward(const Tensor<T>& audio, const Tensor<T>& visual, const ModelParams<T>& params,
                       const EdrConfig& cfg) {
  return forward_encoded(encode_inputs(audio, visual, params, cfg), params, cfg, cfg.positional_encoding);
}

template <typename T>
Activations<T> forward(const VideoRecord& r, const ModelParams<T>& params, const EdrConfig& cfg) {
  return forward(r.audio.cast<T>(), r.visual.cast<T>(), params, cfg);
}

enum class Readout { gated, audio, visual };

/// Segment probabilities read from the gated features or from one modal
/// branch's R^L through the shared classifier head.
template <typename T>
Tensor<T> readout_probs(const Activations<T>& a, const ModelParams<T>& params, Readout r) {
  if (r == Readout::gated) return a.probs;
  const auto& rec = a.rec[idx(r == Readout::audio ? Branch::audio : Branch::visual)];
  if (rec.empty()) throw ConfigError("readout: branch not enabled");
  return classify(rec.back(), params.classifier).second;
}

// ---------------------------------------------------------------------------
// Backward

/// Loss gradients with respect to the network outputs. Either may be empty.
template <typename T>
struct OutputGrads {
  Tensor<T> probs;     // dLoss / d yhat_t, N x C
  Tensor<T> features;  // dLoss / d features, N x d
};

template <typename T>
ModelParams<T> backward(const EdrConfig& cfg, const ModelParams<T>& params, const Activations<T>& a,
                        const OutputGrads<T>& og) {
  ModelParams<T> g = ModelParams<T>::zeros(cfg);
  const std::size_t n = a.features.rows(), d = a.features.cols(), c = a.probs.cols();

  // Softmax and classifier head.
  auto dfeat = og.features.empty() ? Tensor<T>::matrix(n, d) : og.features;
  if (!og.probs.empty()) {
    auto dlogits = Tensor<T>::matrix(n, c);
    for (std::size_t t = 0; t < n; ++t) {
      T dot{};
      for (std::size_t j = 0; j < c; ++j) dot += og.probs(t, j) * a.probs(t, j);
      for (std::size_t j = 0; j < c; ++j) dlogits(t, j) = a.probs(t, j) * (og.probs(t, j) - dot);
    }
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < c; ++j) {
        const T gl = dlogits(t, j);
        g.classifier.bias[j] += gl;
        for (std::size_t i = 0; i < d; ++i) {
          g.classifier.weight(i, j) += a.features(t, i) * gl;
          dfeat(t, i) += params.classifier.weight(i, j) * gl;
        }
      }
  }

  // Gated fusion.
  std::array<Tensor<T>, 2> drec;
  if (cfg.gated()) {
    const auto& ra = a.rec[idx(Branch::audio)].back();
    const auto& rv = a.rec[idx(Branch::visual)].back();
    Tensor<T> dra(ra.shape()), drv(rv.shape()), dz(ra.shape());
    for (std::size_t i = 0; i < dfeat.size(); ++i) {
      const T gi = a.gate[i];
      dra[i] = dfeat[i] * gi;
      drv[i] = dfeat[i] * (T{1} - gi);
      dz[i] = dfeat[i] * (ra[i] - rv[i]) * gi * (T{1} - gi);
    }
    const auto dcat = conv1d_backward(concat_cols(ra, rv), params.gate.weight, dz, g.gate.weight,
                                      g.gate.bias, same_pad_left(static_cast<std::size_t>(cfg.k)));
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        dra(t, i) += dcat(t, i);
        drv(t, i) += dcat(t, d + i);
      }
    drec[idx(Branch::audio)] = std::move(dra);
    drec[idx(Branch::visual)] = std::move(drv);
  } else {
    drec[idx(cfg.branches.audio ? Branch::audio : Branch::visual)] = std::move(dfeat);
  }

  // Recomposition, routing residual gradients back into the decomposition maps.
  std::array<std::vector<Tensor<T>>, 3> ddec;
  for (Branch b : kBranches) {
    if (!cfg.branches.enabled(b)) continue;
    for (const auto& m : a.dec[idx(b)]) ddec[idx(b)].emplace_back(m.shape());
  }
  const int L = cfg.layers;
  for (Branch b : kModalBranches) {
    if (!cfg.branches.enabled(b)) continue;
    Tensor<T> dy = std::move(drec[idx(b)]);
    for (int l = L; l >= 1; --l) {
      const auto& out = a.rec[idx(b)][l - 1];
      const auto& layer = params.recomposition[idx(b)][l - 1];
      auto& gl = g.recomposition[idx(b)][l - 1];
      const auto dpre = relu_backward(out, std::move(dy));
      auto din = conv1d_transpose_backward(a.rec_in[idx(b)][l - 1], layer.weight, dpre, gl.weight, gl.bias);
      const int partner = l == 1 ? L : L - l + 1;
      ddec[idx(b)][partner] += din;
      if (cfg.branches.fused) ddec[idx(Branch::fused)][partner] += din;
      dy = std::move(din);  // flows into R^(l-1) for l >= 2
    }
  }

  // Decomposition.
  std::array<Tensor<T>, 3> dx0;
  for (Branch b : kBranches) {
    if (!cfg.branches.enabled(b)) continue;
    for (int l = L; l >= 1; --l) {
      const auto& layer = params.decomposition[idx(b)][l - 1];
      auto& gl = g.decomposition[idx(b)][l - 1];
      const auto dpre = relu_backward(a.dec[idx(b)][l], ddec[idx(b)][l]);
      ddec[idx(b)][l - 1] += conv1d_backward(a.dec[idx(b)][l - 1], layer.weight, dpre, gl.weight, gl.bias);
    }
    dx0[idx(b)] = std::move(ddec[idx(b)][0]);
  }

  // Spatial encoder: only the visual portions of D_V^0 and D_AV^0 reach it.
  if (cfg.uses_visual()) {
    const std::size_t dv = static_cast<std::size_t>(cfg.visual_dim);
    const std::size_t da = static_cast<std::size_t>(cfg.audio_dim);
    const std::size_t s = a.visual_maps.dim(1);
    const auto side = static_cast<std::size_t>(cfg.grid_side());
    auto dpooled = Tensor<T>::matrix(n, dv);
    if (cfg.branches.visual) dpooled += dx0[idx(Branch::visual)];
    if (cfg.branches.fused)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < dv; ++i) dpooled(t, i) += dx0[idx(Branch::fused)](t, da + i);
    for (std::size_t t = 0; t < n; ++t) {
      Tensor<T> dmaps({s, dv});
      const Tensor<T> maps({s, dv}, std::vector<T>(a.visual_maps.row(t).begin(), a.visual_maps.row(t).end()));
      for (std::size_t p = 0; p < s; ++p)
        for (std::size_t i = 0; i < dv; ++i) dmaps(p, i) = dpooled(t, i) / static_cast<T>(s);
      const auto dpre = relu_backward(maps, std::move(dmaps));
      const Tensor<T> x({s, dv}, std::vector<T>(a.visual_input.row(t).begin(), a.visual_input.row(t).end()));
      conv2d_same_backward(x, side, params.spatial.weight, dpre, g.spatial.weight, g.spatial.bias);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Class activation maps

/// Location of the largest entry of D^1; ties keep the lowest channel, then
/// the lowest time index.
template <typename T>
std::pair<std::size_t, std::size_t> max_activation(const Tensor<T>& d1) {
  std::size_t best_t = 0, best_c = 0;
  T best = d1(0, 0);
  for (std::size_t c = 0; c < d1.cols(); ++c)
    for (std::size_t t = 0; t < d1.rows(); ++t)
      if (d1(t, c) > best) {
        best = d1(t, c);
        best_t = t;
        best_c = c;
      }
  return {best_t, best_c};
}

/// Scales a map to [0, 1]; a constant map becomes all zeros.
template <typename T>
void minmax_normalize(Tensor<T>& m) {
  if (m.empty()) return;
  const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
  const T low = *lo, range = *hi - *lo;
  for (auto& v : m.values()) v = range > T{} ? (v - low) / range : T{};
}

/// Unnormalized CAMs: for every window position w, the k-averaged sum over
/// taps j and visual input channels i of W[c*][i][j] * maps[w + j][:, i],
/// where c* is the maximally activated channel of D_source^1.
template <typename T>
std::vector<Tensor<T>> cam_raw(const Activations<T>& a, const ModelParams<T>& params,
                               const EdrConfig& cfg, Branch source) {
  if (source == Branch::audio) throw ConfigError("cam: source must be V or AV");
  if (!cfg.branches.enabled(source))
    throw ConfigError(std::string("cam: branch ") + branch_name(source) + " is disabled");
  const auto& d1 = a.dec[idx(source)].at(1);
  const auto [t_star, c_star] = max_activation(d1);
  (void)t_star;
  const auto& w = params.decomposition[idx(source)].front().weight;
  const std::size_t offset = source == Branch::fused ? static_cast<std::size_t>(cfg.audio_dim) : 0;
  const std::size_t k = static_cast<std::size_t>(cfg.k), dv = static_cast<std::size_t>(cfg.visual_dim);
  const std::size_t s = a.visual_maps.dim(1), side = static_cast<std::size_t>(cfg.grid_side());
  const std::size_t windows = a.visual_maps.dim(0) - k + 1;
  std::vector<Tensor<T>> out;
  for (std::size_t win = 0; win < windows; ++win) {
    auto cam = Tensor<T>::matrix(side, side);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t p = 0; p < s; ++p) {
        T acc{};
        for (std::size_t i = 0; i < dv; ++i) acc += w(c_star, offset + i, j) * a.visual_maps(win + j, p, i);
        cam[p] += acc;
      }
    for (auto& v : cam.values()) v /= static_cast<T>(k);
    out.push_back(std::move(cam));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> cam_extract(const Activations<T>& a, const ModelParams<T>& params,
                                   const EdrConfig& cfg, Branch source) {
  auto maps = cam_raw(a, params, cfg, source);
  for (auto& m : maps) minmax_normalize(m);
  return maps;
}

}  // namespace edr
