#pragma once

// Prediction, segment-accuracy evaluation and the mini-batch training loop.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrnet/avedata.hpp"
#include "edrnet/b2ilc.hpp"
#include "edrnet/edrnet.hpp"
#include "edrnet/harness/config.hpp"
#include "edrnet/losses.hpp"
#include "edrnet/smbfuse.hpp"

namespace edr {

struct EvalReport {
  double segment_accuracy = 0.0;
  std::map<int, double> per_class_accuracy;  // by ground-truth class, classes that occur only
  std::vector<std::vector<long>> confusion;  // [truth][prediction]
  long n_segments = 0;
};

/// Builds the report from aligned ground-truth and predicted label sequences.
inline EvalReport make_report(const std::vector<std::vector<int>>& truth,
                              const std::vector<std::vector<int>>& pred, int num_classes) {
  if (truth.size() != pred.size()) throw std::invalid_argument("make_report: sequence counts differ");
  EvalReport r;
  r.confusion.assign(num_classes, std::vector<long>(num_classes, 0));
  for (std::size_t v = 0; v < truth.size(); ++v) {
    if (truth[v].size() != pred[v].size()) throw std::invalid_argument("make_report: sequence lengths differ");
    for (std::size_t t = 0; t < truth[v].size(); ++t) ++r.confusion.at(truth[v][t]).at(pred[v][t]);
  }
  long correct = 0;
  for (int c = 0; c < num_classes; ++c) {
    const long row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), 0L);
    r.n_segments += row;
    correct += r.confusion[c][c];
    if (row > 0) r.per_class_accuracy[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
  }
  r.segment_accuracy = r.n_segments ? static_cast<double>(correct) / static_cast<double>(r.n_segments) : 0.0;
  return r;
}

inline std::vector<PredictionSequence> predict(const Dataset& ds, const ModelParams<float>& params,
                                               const EdrConfig& cfg, Readout readout = Readout::gated) {
  std::vector<PredictionSequence> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) {
    const auto acts = forward(r, params, cfg);
    out.push_back(PredictionSequence::from_probs(readout_probs(acts, params, readout)));
  }
  return out;
}

inline EvalReport evaluate_predictions(const Dataset& ds, const std::vector<PredictionSequence>& preds,
                                       bool apply_b2ilc, double wr = 0.5) {
  std::vector<std::vector<int>> truth, hard;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    truth.push_back(ds.records[i].seg_labels);
    hard.push_back(apply_b2ilc ? correct(preds[i].hard, wr, ds.background()) : preds[i].hard);
  }
  return make_report(truth, hard, ds.num_classes());
}

/// Segment accuracy of per-segment argmax predictions, optionally corrected.
inline EvalReport evaluate(const Dataset& ds, const ModelParams<float>& params, const EdrConfig& cfg,
                           bool apply_b2ilc, double wr = 0.5, Readout readout = Readout::gated) {
  return evaluate_predictions(ds, predict(ds, params, cfg, readout), apply_b2ilc, wr);
}

// ---------------------------------------------------------------------------
// Training

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams<float> params;  // best-validation parameters
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_acc = -1.0;
  std::vector<std::string> warnings;
};

/// Loss of one video and, when `grads` is given, its parameter gradient.
template <typename T>
T video_objective(const VideoRecord& r, const ModelParams<T>& params, const EdrConfig& cfg, Task task,
                  const LossWeights& w, ModelParams<T>* grads = nullptr) {
  const auto acts = forward(r, params, cfg);
  OutputGrads<T> og;
  og.probs = Tensor<T>(acts.probs.shape());
  og.features = Tensor<T>(acts.features.shape());
  const int background = cfg.classes - 1;
  T loss = task == Task::sel
               ? sel_objective(acts.probs, r.seg_labels, acts.features, w, grads ? &og : nullptr, background)
               : wsel_objective(acts.probs, r.video_label, grads ? &og.probs : nullptr);
  if (grads) *grads = backward(cfg, params, acts, og);
  return loss;
}

class Adam {
 public:
  Adam(const EdrConfig& cfg, AdamConfig opt)
      : opt_(opt), m_(ModelParams<float>::zeros(cfg)), v_(ModelParams<float>::zeros(cfg)) {}

  void step(ModelParams<float>& params, const ModelParams<float>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    std::vector<Tensor<float>*> ps, ms, vs;
    std::vector<const Tensor<float>*> gs;
    params.for_each([&](const std::string&, Tensor<float>& t) { ps.push_back(&t); });
    m_.for_each([&](const std::string&, Tensor<float>& t) { ms.push_back(&t); });
    v_.for_each([&](const std::string&, Tensor<float>& t) { vs.push_back(&t); });
    grads.for_each([&](const std::string&, const Tensor<float>& t) { gs.push_back(&t); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = *ps[i];
      auto& m = *ms[i];
      auto& v = *vs[i];
      const auto& g = *gs[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]) + opt_.weight_decay * static_cast<double>(p[j]);
        m[j] = static_cast<float>(opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj);
        v[j] = static_cast<float>(opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj);
        const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
        p[j] = static_cast<float>(p[j] - update);
      }
    }
  }

 private:
  AdamConfig opt_;
  ModelParams<float> m_, v_;
  int t_ = 0;
};

template <typename T>
void add_into(ModelParams<T>& acc, const ModelParams<T>& g, T scale = T{1}) {
  std::vector<const Tensor<T>*> src;
  g.for_each([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  acc.for_each([&](const std::string&, Tensor<T>& t) {
    const auto& s = *src[i++];
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += scale * s[j];
  });
}

/// Mini-batch Adam on the SEL or WSEL objective. Returns the parameters with
/// the best validation segment accuracy (the last ones when `val` is empty).
inline TrainResult train(const Dataset& train_set, const Dataset& val, const EdrConfig& cfg,
                         const TrainConfig& tc, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  TrainResult res;

  const Dataset* data = &train_set;
  Dataset augmented;
  if (tc.augment) {
    auto aug = augment_dataset(train_set, tc.augment_per_class, tc.seed, cfg.segments);
    res.warnings = std::move(aug.warnings);
    augmented = train_set;
    augmented.records.insert(augmented.records.end(), std::make_move_iterator(aug.fused.records.begin()),
                             std::make_move_iterator(aug.fused.records.end()));
    data = &augmented;
  }
  const std::size_t n = data->records.size();

  ModelParams<float> params = ModelParams<float>::init(cfg);
  Adam adam(cfg, tc.optimizer);
  std::mt19937_64 shuffle_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses(n, 0.0);

  res.params = params;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const double lr = tc.optimizer.lr * std::pow(tc.lr_decay_factor, (epoch - 1) / tc.lr_decay_every);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(tc.batch_size));
      ModelParams<float> batch = ModelParams<float>::zeros(cfg);
      for (std::size_t b = start; b < end; ++b) {
        const auto& r = data->records[order[b]];
        ModelParams<float> g;
        const float loss = video_objective(r, params, cfg, tc.task, tc.loss, &g);
        if (!std::isfinite(loss))
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on video '" + r.id +
                              "' (lr " + std::to_string(lr) + ")");
        losses[order[b]] = loss;
        add_into(batch, g);
      }
      batch.for_each([&](const std::string&, Tensor<float>& t) {
        for (auto& v : t.values()) v /= static_cast<float>(end - start);
      });
      adam.step(params, batch, lr);
    }

    EpochLog log{epoch, n ? std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n) : 0.0,
                 0.0, lr};
    if (!val.records.empty()) {
      log.val_acc = evaluate(val, params, cfg, tc.b2ilc, tc.wr).segment_accuracy;
      if (log.val_acc > res.best_val_acc) {
        res.best_val_acc = log.val_acc;
        res.best_epoch = epoch;
        res.params = params;
      }
    } else {
      log.val_acc = std::nan("");
      res.best_epoch = epoch;
      res.params = params;
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!val.records.empty() && epoch - res.best_epoch >= tc.patience) break;
  }
  return res;
}

}  // namespace edr
