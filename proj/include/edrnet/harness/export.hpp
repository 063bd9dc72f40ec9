#pragma once

// File exports: CAM images (binary PGM), prediction files for label
// correction, and NDJSON training logs.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edrnet/b2ilc.hpp"
#include "edrnet/blob.hpp"
#include "edrnet/edrnet.hpp"
#include "edrnet/harness/train.hpp"

namespace edr {

/// 8-bit binary PGM of a [0, 1] map, rows top to bottom.
inline void write_pgm(const std::filesystem::path& file, const Tensor<float>& map) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << "P5\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  for (float v : map.values()) {
    const float clamped = std::min(1.0f, std::max(0.0f, v));
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0f))));
  }
}

/// Writes `{video_id}_{source}_{t}.pgm` for every window t of every video and
/// requested source. Returns the written paths in order.
inline std::vector<std::filesystem::path> export_cams(const Dataset& ds, const ModelParams<float>& params,
                                                      const EdrConfig& cfg, const std::filesystem::path& out_dir,
                                                      const std::vector<Branch>& sources = {Branch::visual,
                                                                                            Branch::fused}) {
  std::vector<std::filesystem::path> written;
  if (ds.records.empty()) return written;
  std::filesystem::create_directories(out_dir);
  for (const auto& r : ds.records) {
    const auto acts = forward(r, params, cfg);
    for (Branch src : sources) {
      if (!cfg.branches.enabled(src)) continue;
      const auto maps = cam_extract(acts, params, cfg, src);
      for (std::size_t t = 0; t < maps.size(); ++t) {
        const auto file = out_dir / (r.id + "_" + branch_name(src) + "_" + std::to_string(t) + ".pgm");
        write_pgm(file, maps[t]);
        written.push_back(file);
      }
    }
  }
  return written;
}

/// Prediction file: {video_id: [hard labels]} or {video_id: {"hard": [...],
/// "probs_blob": path}}.
inline std::map<std::string, PredictionSequence> read_predictions(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open predictions " + file.string());
  const auto j = nlohmann::json::parse(is);
  std::map<std::string, PredictionSequence> out;
  for (const auto& [id, v] : j.items()) {
    PredictionSequence p;
    if (v.is_array()) {
      p.hard = v.get<std::vector<int>>();
    } else {
      p.hard = v.at("hard").get<std::vector<int>>();
      if (v.contains("probs_blob"))
        p.probs = read_blob(file.parent_path() / v.at("probs_blob").get<std::string>());
    }
    out.emplace(id, std::move(p));
  }
  return out;
}

inline void write_predictions(const std::filesystem::path& file,
                              const std::map<std::string, PredictionSequence>& preds) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, p] : preds) j[id] = p.hard;
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << j.dump(2) << '\n';
}

inline std::string epoch_json(const EpochLog& e) {
  nlohmann::json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
  if (std::isfinite(e.val_acc))
    j["val_acc"] = e.val_acc;
  else
    j["val_acc"] = nullptr;
  return j.dump();
}

}  // namespace edr
