#pragma once

// Checkpoints: one blob per parameter tensor plus `index.json` holding the
// model config and the name -> blob path map.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "edrnet/blob.hpp"
#include "edrnet/edrnet.hpp"
#include "edrnet/harness/config.hpp"

namespace edr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  EdrConfig config;
  ModelParams<float> params;
};

inline void checkpoint_save(const ModelParams<float>& params, const EdrConfig& cfg,
                            const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  nlohmann::json index;
  index["config"] = to_json(cfg);
  index["params"] = nlohmann::json::object();
  params.for_each([&](const std::string& name, const Tensor<float>& t) {
    const fs::path rel = fs::path("params") / (name + ".avet");
    write_blob(dir / rel, t);
    index["params"][name] = rel.generic_string();
  });
  std::ofstream os(dir / "index.json", std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + (dir / "index.json").string());
  os << index.dump(2) << '\n';
}

inline Checkpoint checkpoint_load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.json");
  if (!is) throw CheckpointError("missing checkpoint index " + (dir / "index.json").string());
  nlohmann::json index;
  Checkpoint ck;
  try {
    index = nlohmann::json::parse(is);
    ck.config = parse_config(index.at("config")).model;
    if (!index.at("params").is_object()) throw CheckpointError("'params' must be an object");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint index " + (dir / "index.json").string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("corrupt checkpoint index " + (dir / "index.json").string() + ": " + e.what());
  }
  ck.params = ModelParams<float>::zeros(ck.config);
  const auto& files = index.at("params");
  std::size_t seen = 0;
  ck.params.for_each([&](const std::string& name, Tensor<float>& t) {
    if (!files.contains(name)) throw CheckpointError("checkpoint index lacks parameter '" + name + "'");
    Tensor<float> loaded;
    try {
      loaded = read_blob(dir / files.at(name).get<std::string>());
    } catch (const BlobError& e) {
      throw CheckpointError(std::string("parameter '") + name + "': " + e.what());
    }
    if (loaded.shape() != t.shape())
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(loaded.shape()) +
                            ", config implies " + shape_string(t.shape()));
    t = std::move(loaded);
    ++seen;
  });
  if (seen != files.size()) throw CheckpointError("checkpoint index lists parameters the config does not define");
  return ck;
}

/// Loads and rejects a checkpoint whose config differs from `expected`.
inline ModelParams<float> checkpoint_load(const std::filesystem::path& dir, const EdrConfig& expected) {
  auto ck = checkpoint_load(dir);
  auto diff = differing_fields(to_json(ck.config), to_json(expected));
  std::erase(diff, "seed");
  if (!diff.empty()) {
    std::string fields;
    for (const auto& f : diff)
      fields += (fields.empty() ? "" : ", ") + f + " (checkpoint " + to_json(ck.config).at(f).dump() +
                ", expected " + to_json(expected).at(f).dump() + ")";
    throw CheckpointError("checkpoint config mismatch: " + fields);
  }
  return std::move(ck.params);
}

}  // namespace edr
