#pragma once

// Ablation runner: component toggles, branch isolation, k / L / d sweeps,
// augmentation size and positional encoding on/off. Every row is trained
// from the same seed and evaluated on the test split.

#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edrnet/harness/config.hpp"
#include "edrnet/harness/train.hpp"

namespace edr {

enum class AblationSuite { components, branches, sweep_k, sweep_L, sweep_d, augment_size, positional_encoding };

inline AblationSuite parse_suite(const std::string& s) {
  static const std::map<std::string, AblationSuite> names{
      {"components", AblationSuite::components}, {"branches", AblationSuite::branches},
      {"sweep-k", AblationSuite::sweep_k},       {"sweep-L", AblationSuite::sweep_L},
      {"sweep-d", AblationSuite::sweep_d},       {"augment-size", AblationSuite::augment_size},
      {"pe", AblationSuite::positional_encoding}};
  const auto it = names.find(s);
  if (it == names.end()) throw ConfigError("unknown ablation suite '" + s + "'");
  return it->second;
}

struct AblationOptions {
  std::vector<int> widths{256, 512, 768, 1024, 1280, 1536};
  std::vector<int> augment_sizes{50, 100, 150, 200, 250, 300, 350, 400};
};

struct AblationRow {
  std::string name;
  EdrConfig model;
  TrainConfig train;
  std::vector<std::string> toggled;  // fingerprint keys this row may change
  std::optional<double> acc_audio, acc_visual, acc_gated;
  EvalReport report;  // primary readout (gated, or the single enabled branch)
};

/// Row configurations of a suite, without training.
inline std::vector<AblationRow> plan_ablation(AblationSuite suite, const EdrConfig& base_model,
                                              const TrainConfig& base_train, const AblationOptions& opt = {}) {
  std::vector<AblationRow> rows;
  auto add = [&](std::string name, EdrConfig m, TrainConfig t, std::vector<std::string> toggled) {
    rows.push_back({std::move(name), m, t, std::move(toggled), {}, {}, {}, {}});
  };
  switch (suite) {
    case AblationSuite::components: {
      const double lambda2 = base_train.loss.lambda2 > 0 ? base_train.loss.lambda2 : LossWeights{}.lambda2;
      TrainConfig t = base_train;
      t.task = Task::sel;
      t.b2ilc = false;
      t.loss.lambda2 = 0.0;
      t.augment = false;
      const std::vector<std::string> keys{"train.task", "train.b2ilc", "train.lambda2", "train.augment"};
      add("SEL EDRNet", base_model, t, keys);
      t.b2ilc = true;
      add("SEL EDRNet+B2ILC", base_model, t, keys);
      t.loss.lambda2 = lambda2;
      add("SEL EDRNet+B2ILC+LSS", base_model, t, keys);
      t.augment = true;
      add("SEL EDRNet+B2ILC+LSS+SMBVF", base_model, t, keys);
      t = base_train;
      t.task = Task::wsel;
      t.b2ilc = false;
      t.loss.lambda2 = 0.0;
      t.augment = false;
      add("WSEL EDRNet", base_model, t, keys);
      t.b2ilc = true;
      add("WSEL EDRNet+B2ILC", base_model, t, keys);
      break;
    }
    case AblationSuite::branches: {
      const std::vector<std::string> keys{"model.branch_a", "model.branch_v", "model.branch_av"};
      const struct {
        const char* name;
        BranchSet set;
      } table[] = {{"A-Only", {true, false, false}},
                   {"V-Only", {false, true, false}},
                   {"A+Dual-Phase Fusion", {true, false, true}},
                   {"V+Dual-Phase Fusion", {false, true, true}},
                   {"A+V Late Fusion", {true, true, false}},
                   {"A+V+Dual-Phase Fusion", {true, true, true}}};
      for (const auto& row : table) {
        EdrConfig m = base_model;
        m.branches = row.set;
        add(row.name, m, base_train, keys);
      }
      break;
    }
    case AblationSuite::sweep_k:
      for (int k = 2; k <= std::min(5, base_model.segments); ++k) {
        EdrConfig m = base_model;
        m.k = k;
        m.layers = max_layers(k, m.segments);
        add("k=" + std::to_string(k) + " L=" + std::to_string(m.layers), m, base_train, {"model.k", "model.L"});
      }
      break;
    case AblationSuite::sweep_L:
      for (int l = 1; l <= max_layers(base_model.k, base_model.segments); ++l) {
        EdrConfig m = base_model;
        m.layers = l;
        add("L=" + std::to_string(l), m, base_train, {"model.L"});
      }
      break;
    case AblationSuite::sweep_d:
      for (int d : opt.widths) {
        EdrConfig m = base_model;
        m.width = d;
        add("d=" + std::to_string(d), m, base_train, {"model.d"});
      }
      break;
    case AblationSuite::augment_size:
      for (int s : opt.augment_sizes) {
        TrainConfig t = base_train;
        t.task = Task::sel;
        t.augment = true;
        t.augment_per_class = s;
        add("S=" + std::to_string(s), base_model, t, {"train.task", "train.augment", "train.augment_per_class"});
      }
      break;
    case AblationSuite::positional_encoding:
      for (bool pe : {true, false}) {
        EdrConfig m = base_model;
        m.positional_encoding = pe;
        add(pe ? "PE on" : "PE off", m, base_train, {"model.positional_encoding"});
      }
      break;
  }
  return rows;
}

inline std::vector<AblationRow> run_ablation(AblationSuite suite, const Dataset& train_set, const Dataset& val,
                                             const Dataset& test, const EdrConfig& base_model,
                                             const TrainConfig& base_train, const AblationOptions& opt = {}) {
  auto rows = plan_ablation(suite, base_model, base_train, opt);
  // B2ILC is inference-only, so rows differing only in that flag share a model.
  std::map<std::string, ModelParams<float>> trained;
  for (auto& row : rows) {
    TrainConfig key_cfg = row.train;
    key_cfg.b2ilc = false;
    const std::string key = to_json(row.model).dump() + to_json(key_cfg).dump();
    auto it = trained.find(key);
    if (it == trained.end()) it = trained.emplace(key, train(train_set, val, row.model, row.train).params).first;
    const auto& params = it->second;
    const bool b2 = row.train.b2ilc;
    const double wr = row.train.wr;
    if (row.model.branches.audio)
      row.acc_audio = evaluate(test, params, row.model, b2, wr, Readout::audio).segment_accuracy;
    if (row.model.branches.visual)
      row.acc_visual = evaluate(test, params, row.model, b2, wr, Readout::visual).segment_accuracy;
    row.report = evaluate(test, params, row.model, b2, wr, Readout::gated);
    if (row.model.gated()) row.acc_gated = row.report.segment_accuracy;
  }
  return rows;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) {
    if (v)
      os << std::setw(9) << std::fixed << std::setprecision(2) << 100.0 * *v;
    else
      os << std::setw(9) << "-";
  };
  os << std::left << std::setw(30) << "configuration" << std::right << std::setw(9) << "A" << std::setw(9)
     << "V" << std::setw(9) << "Gated" << std::setw(9) << "Acc" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(30) << r.name << std::right;
    cell(r.acc_audio);
    cell(r.acc_visual);
    cell(r.acc_gated);
    cell(r.report.segment_accuracy);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"name", r.name},
                     {"config", to_json(RunConfig{r.model, r.train})},
                     {"segment_accuracy", r.report.segment_accuracy},
                     {"n_segments", r.report.n_segments}};
    if (r.acc_audio) j["acc_audio"] = *r.acc_audio;
    if (r.acc_visual) j["acc_visual"] = *r.acc_visual;
    if (r.acc_gated) j["acc_gated"] = *r.acc_gated;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace edr
