#pragma once

// Run configuration: model + training settings, read from and written to a
// flat JSON object whose keys mirror the field names.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edrnet/edrnet.hpp"
#include "edrnet/losses.hpp"

namespace edr {

enum class Task { sel, wsel };

inline std::string to_string(Task t) { return t == Task::sel ? "SEL" : "WSEL"; }

inline Task parse_task(const std::string& s) {
  if (s == "SEL" || s == "sel") return Task::sel;
  if (s == "WSEL" || s == "wsel") return Task::wsel;
  throw ConfigError("unknown task '" + s + "'");
}

struct AdamConfig {
  double lr = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  Task task = Task::sel;
  AdamConfig optimizer;
  int batch_size = 64;
  int epochs = 300;
  int lr_decay_every = 80;
  double lr_decay_factor = 0.5;
  LossWeights loss;
  bool augment = false;
  int augment_per_class = 250;
  bool b2ilc = false;
  double wr = 0.5;
  std::uint64_t seed = 0;
  int patience = 30;

  void validate() const {
    loss.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(optimizer.lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (augment_per_class < 0) throw ConfigError("augment_per_class must be >= 0");
    if (!(wr >= 0.0 && wr <= 1.0)) throw ConfigError("wr must lie in [0, 1]");
    if (task == Task::wsel && augment)
      throw ConfigError("SMB augmentation needs segment labels and is unavailable for WSEL");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
  EdrConfig model;
  TrainConfig train;
};

inline nlohmann::json to_json(const EdrConfig& c) {
  return {{"k", c.k},
          {"L", c.layers},
          {"d", c.width},
          {"N", c.segments},
          {"C", c.classes},
          {"d_a", c.audio_dim},
          {"d_v", c.visual_dim},
          {"S", c.spatial},
          {"branch_a", c.branches.audio},
          {"branch_v", c.branches.visual},
          {"branch_av", c.branches.fused},
          {"spatial_kernel", c.spatial_kernel},
          {"positional_encoding", c.positional_encoding},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"task", to_string(c.task)},
          {"optimizer", "adam"},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_decay_every", c.lr_decay_every},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lambda1", c.loss.lambda1},
          {"lambda2", c.loss.lambda2},
          {"margin", c.loss.margin},
          {"augment", c.augment},
          {"augment_per_class", c.augment_per_class},
          {"b2ilc", c.b2ilc},
          {"wr", c.wr},
          {"seed", c.seed},
          {"patience", c.patience}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  auto j = to_json(c.model);
  j.update(to_json(c.train));
  return j;
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline RunConfig parse_config(const nlohmann::json& j, RunConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  auto& m = base.model;
  auto& t = base.train;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "k") m.k = v.get<int>();
      else if (key == "L") m.layers = v.get<int>();
      else if (key == "d") m.width = v.get<int>();
      else if (key == "N") m.segments = v.get<int>();
      else if (key == "C") m.classes = v.get<int>();
      else if (key == "d_a") m.audio_dim = v.get<int>();
      else if (key == "d_v") m.visual_dim = v.get<int>();
      else if (key == "S") m.spatial = v.get<int>();
      else if (key == "branch_a") m.branches.audio = v.get<bool>();
      else if (key == "branch_v") m.branches.visual = v.get<bool>();
      else if (key == "branch_av") m.branches.fused = v.get<bool>();
      else if (key == "spatial_kernel") m.spatial_kernel = v.get<int>();
      else if (key == "positional_encoding") m.positional_encoding = v.get<bool>();
      else if (key == "seed") m.seed = t.seed = v.get<std::uint64_t>();
      else if (key == "task") t.task = parse_task(v.get<std::string>());
      else if (key == "optimizer") {
        if (v.get<std::string>() != "adam") throw ConfigError("only the adam optimizer is available");
      } else if (key == "lr") t.optimizer.lr = v.get<double>();
      else if (key == "beta1") t.optimizer.beta1 = v.get<double>();
      else if (key == "beta2") t.optimizer.beta2 = v.get<double>();
      else if (key == "eps") t.optimizer.eps = v.get<double>();
      else if (key == "weight_decay") t.optimizer.weight_decay = v.get<double>();
      else if (key == "batch_size") t.batch_size = v.get<int>();
      else if (key == "epochs") t.epochs = v.get<int>();
      else if (key == "lr_decay_every") t.lr_decay_every = v.get<int>();
      else if (key == "lr_decay_factor") t.lr_decay_factor = v.get<double>();
      else if (key == "lambda1") t.loss.lambda1 = v.get<double>();
      else if (key == "lambda2") t.loss.lambda2 = v.get<double>();
      else if (key == "margin") t.loss.margin = v.get<double>();
      else if (key == "augment") t.augment = v.get<bool>();
      else if (key == "augment_per_class") t.augment_per_class = v.get<int>();
      else if (key == "b2ilc") t.b2ilc = v.get<bool>();
      else if (key == "wr") t.wr = v.get<double>();
      else if (key == "patience") t.patience = v.get<int>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  m.validate();
  t.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return parse_config(nlohmann::json::parse(is), base);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

/// Field-by-field rendering used to compare configurations.
inline std::map<std::string, std::string> config_fingerprint(const EdrConfig& m, const TrainConfig& t) {
  std::map<std::string, std::string> out;
  const auto jm = to_json(m), jt = to_json(t);
  for (const auto& [k, v] : jm.items()) out["model." + k] = v.dump();
  for (const auto& [k, v] : jt.items()) out["train." + k] = v.dump();
  return out;
}

inline std::vector<std::string> differing_fields(const nlohmann::json& a, const nlohmann::json& b) {
  std::set<std::string> keys;
  for (const auto& [k, v] : a.items()) keys.insert(k);
  for (const auto& [k, v] : b.items()) keys.insert(k);
  std::vector<std::string> out;
  for (const auto& k : keys)
    if (!a.contains(k) || !b.contains(k) || a.at(k) != b.at(k)) out.push_back(k);
  return out;
}

}  // namespace edr
