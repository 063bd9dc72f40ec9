#pragma once

// Video records, datasets, manifest persistence, validation, the synthetic
// generator and stratified splitting.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edrnet/blob.hpp"
#include "edrnet/tensor.hpp"

namespace edr {

inline constexpr int kSegments = 10;
inline constexpr int kNumClasses = 29;
inline constexpr int kBackground = kNumClasses - 1;

inline const std::vector<std::string>& ave_class_names() {
  static const std::vector<std::string> names{
      "Church bell", "Male speech",  "Bark",         "Fixed-wing aircraft",
      "Race car",    "Female speech", "Helicopter",  "Violin",
      "Flute",       "Ukulele",       "Frying (food)", "Truck",
      "Shofar",      "Motorcycle",    "Acoustic guitar", "Train horn",
      "Clock",       "Banjo",         "Goat",        "Baby cry",
      "Bus",         "Chainsaw",      "Cat",         "Horse",
      "Toilet flush", "Rodents",      "Accordion",   "Mandolin",
      "Background"};
  return names;
}

struct VideoRecord {
  std::string id;
  Tensor<float> audio;   // N x d_a
  Tensor<float> visual;  // N x S x d_v
  std::vector<int> seg_labels;
  int video_label = kBackground;

  int segments() const { return static_cast<int>(seg_labels.size()); }

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct Dataset {
  std::vector<VideoRecord> records;
  std::vector<std::string> class_names = ave_class_names();
  Split split = Split::train;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int background() const { return num_classes() - 1; }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string record, const std::string& what)
      : std::runtime_error(record.empty() ? what : "record '" + record + "': " + what),
        record_(std::move(record)) {}
  const std::string& record() const noexcept { return record_; }

 private:
  std::string record_;
};

struct Violation {
  std::string invariant;
  std::string location;
};

/// Maximal runs [first, last] of equal label class (foreground vs background).
struct LabelRun {
  int first = 0;
  int last = 0;
  bool foreground = false;
  int length() const { return last - first + 1; }
};

inline std::vector<LabelRun> foreground_runs(const std::vector<int>& labels, int background) {
  std::vector<LabelRun> runs;
  const int n = static_cast<int>(labels.size());
  for (int t = 0; t < n;) {
    const bool fg = labels[t] != background;
    int end = t;
    while (end + 1 < n && (labels[end + 1] != background) == fg) ++end;
    runs.push_back({t, end, fg});
    t = end + 1;
  }
  return runs;
}

/// Lists every broken record invariant; an empty result means the record is valid.
inline std::vector<Violation> validate_record(const VideoRecord& r, int num_classes = kNumClasses,
                                              int segments = kSegments) {
  std::vector<Violation> out;
  const int background = num_classes - 1;
  const int n = r.segments();
  if (n != segments)
    out.push_back({"segment-count", "expected " + std::to_string(segments) + " segments, got " +
                                        std::to_string(n)});
  if (r.audio.rank() != 2 || static_cast<int>(r.audio.dim(0)) != n)
    out.push_back({"shape", "audio " + shape_string(r.audio.shape())});
  if (r.visual.rank() != 3 || static_cast<int>(r.visual.dim(0)) != n)
    out.push_back({"shape", "visual " + shape_string(r.visual.shape())});

  std::set<int> fg_classes;
  for (int t = 0; t < n; ++t) {
    const int y = r.seg_labels[t];
    if (y < 0 || y >= num_classes)
      out.push_back({"label-range", "segment " + std::to_string(t) + " label " + std::to_string(y)});
    else if (y != background)
      fg_classes.insert(y);
  }
  if (fg_classes.size() > 1)
    out.push_back({"single-event", std::to_string(fg_classes.size()) + " foreground classes"});
  const int expected_video = fg_classes.empty() ? background : *fg_classes.begin();
  if (r.video_label != expected_video)
    out.push_back({"video-label", "video label " + std::to_string(r.video_label) +
                                      ", segments imply " + std::to_string(expected_video)});
  for (const auto& run : foreground_runs(r.seg_labels, background))
    if (run.foreground && run.length() < 2)
      out.push_back({"min-event-length", "segments [" + std::to_string(run.first) + ", " +
                                             std::to_string(run.last) + "]"});

  if (r.audio.rank() == 2)
    for (std::size_t t = 0; t < r.audio.dim(0); ++t)
      for (std::size_t c = 0; c < r.audio.dim(1); ++c)
        if (!std::isfinite(r.audio(t, c)))
          out.push_back({"finite", "audio (" + std::to_string(t) + ", " + std::to_string(c) + ")"});
  if (r.visual.rank() == 3)
    for (std::size_t t = 0; t < r.visual.dim(0); ++t)
      for (std::size_t s = 0; s < r.visual.dim(1); ++s)
        for (std::size_t c = 0; c < r.visual.dim(2); ++c)
          if (!std::isfinite(r.visual(t, s, c)))
            out.push_back({"finite", "visual (" + std::to_string(t) + ", " + std::to_string(s) +
                                         ", " + std::to_string(c) + ")"});
  return out;
}

inline std::string describe(const std::vector<Violation>& vs) {
  std::string s;
  for (const auto& v : vs) s += (s.empty() ? "" : "; ") + v.invariant + " at " + v.location;
  return s;
}

namespace detail {

inline std::string blob_stem(std::size_t index, const std::string& id) {
  std::string safe;
  for (char c : id)
    safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%05zu_", index);
  return prefix + safe;
}

}  // namespace detail

/// Writes `dir/manifest.json` plus two blobs per record under `dir/blobs/`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "blobs");
  nlohmann::json manifest;
  manifest["class_names"] = ds.class_names;
  manifest["split"] = to_string(ds.split);
  manifest["records"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const std::string stem = detail::blob_stem(i, r.id);
    const fs::path audio = fs::path("blobs") / (stem + "_audio.avet");
    const fs::path visual = fs::path("blobs") / (stem + "_visual.avet");
    write_blob(dir / audio, r.audio);
    write_blob(dir / visual, r.visual);
    manifest["records"].push_back({{"id", r.id},
                                   {"video_label", r.video_label},
                                   {"audio_blob", audio.generic_string()},
                                   {"visual_blob", visual.generic_string()},
                                   {"seg_labels", r.seg_labels}});
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DatasetError("", "cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream is(manifest_path);
  if (!is) throw DatasetError("", "cannot open manifest " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("", "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.class_names = m.at("class_names").get<std::vector<std::string>>();
    if (m.contains("split")) ds.split = parse_split(m.at("split").get<std::string>());
  } catch (const std::exception& e) {
    throw DatasetError("", std::string("manifest header: ") + e.what());
  }
  if (ds.class_names.size() < 2) throw DatasetError("", "need at least one class plus background");

  std::optional<Shape> audio_tail, visual_tail;
  for (const auto& entry : m.at("records")) {
    VideoRecord r;
    r.id = entry.value("id", std::string{});
    try {
      r.video_label = entry.at("video_label").get<int>();
      r.seg_labels = entry.at("seg_labels").get<std::vector<int>>();
      r.audio = read_blob(base / entry.at("audio_blob").get<std::string>());
      r.visual = read_blob(base / entry.at("visual_blob").get<std::string>());
    } catch (const BlobError& e) {
      throw DatasetError(r.id, e.what());
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(r.id, std::string("manifest entry: ") + e.what());
    }
    const Shape at(r.audio.shape().begin() + (r.audio.rank() ? 1 : 0), r.audio.shape().end());
    const Shape vt(r.visual.shape().begin() + (r.visual.rank() ? 1 : 0), r.visual.shape().end());
    if (!audio_tail) {
      audio_tail = at;
      visual_tail = vt;
    } else if (at != *audio_tail || vt != *visual_tail) {
      throw DatasetError(r.id, "dimension mismatch across records: audio " +
                                   shape_string(r.audio.shape()) + ", visual " +
                                   shape_string(r.visual.shape()));
    }
    if (auto v = validate_record(r, ds.num_classes()); !v.empty())
      throw DatasetError(r.id, "invalid record: " + describe(v));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  int classes = 5;             // foreground classes 0..classes-1
  int videos_per_class = 40;
  int background_videos = -1;  // all-background videos; -1 means videos_per_class
  int audio_dim = 8;
  int visual_dim = 16;
  int spatial = 4;
  double separation = 3.0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Unit directions per class; orthonormal whenever classes <= dim.
inline std::vector<std::vector<double>> class_directions(int classes, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> dirs;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> v(dim);
    for (;;) {
      for (auto& x : v) x = normal(rng);
      if (c < dim)
        for (const auto& u : dirs) {
          double dot = 0;
          for (int i = 0; i < dim; ++i) dot += u[i] * v[i];
          for (int i = 0; i < dim; ++i) v[i] -= dot * u[i];
        }
      double norm = 0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (auto& x : v) x /= norm;
        break;
      }
    }
    dirs.push_back(std::move(v));
  }
  return dirs;
}

}  // namespace detail

/// Gaussian features with a class-dependent mean shift of length `separation`
/// inside one contiguous event span per foreground video.
inline Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 1 || cfg.classes > kNumClasses - 1)
    throw std::invalid_argument("synth: classes must be in [1, 28]");
  if (cfg.videos_per_class < 0 || cfg.audio_dim < 1 || cfg.visual_dim < 1 || cfg.spatial < 1)
    throw std::invalid_argument("synth: invalid counts");
  if (!(cfg.separation >= 0) || !std::isfinite(cfg.separation))
    throw std::invalid_argument("synth: separation must be finite and >= 0");

  std::mt19937_64 rng(cfg.seed);
  const auto audio_dirs = detail::class_directions(cfg.classes, cfg.audio_dim, rng);
  const auto visual_dirs = detail::class_directions(cfg.classes, cfg.visual_dim, rng);
  std::normal_distribution<double> noise;

  Dataset ds;
  auto make = [&](int cls, int index) {
    VideoRecord r;
    r.id = "synth_" + std::to_string(cls) + "_" + std::to_string(index);
    r.seg_labels.assign(kSegments, kBackground);
    if (cls != kBackground) {
      const int len = std::uniform_int_distribution<int>(2, kSegments)(rng);
      const int start = std::uniform_int_distribution<int>(0, kSegments - len)(rng);
      for (int t = start; t < start + len; ++t) r.seg_labels[t] = cls;
    }
    r.video_label = cls;
    r.audio = Tensor<float>::matrix(kSegments, cfg.audio_dim);
    r.visual = Tensor<float>({std::size_t(kSegments), std::size_t(cfg.spatial), std::size_t(cfg.visual_dim)});
    for (int t = 0; t < kSegments; ++t) {
      const bool fg = r.seg_labels[t] != kBackground;
      for (int c = 0; c < cfg.audio_dim; ++c)
        r.audio(t, c) = static_cast<float>(noise(rng) + (fg ? cfg.separation * audio_dirs[cls][c] : 0.0));
      for (int s = 0; s < cfg.spatial; ++s)
        for (int c = 0; c < cfg.visual_dim; ++c)
          r.visual(t, s, c) =
              static_cast<float>(noise(rng) + (fg ? cfg.separation * visual_dirs[cls][c] : 0.0));
    }
    return r;
  };
  for (int cls = 0; cls < cfg.classes; ++cls)
    for (int i = 0; i < cfg.videos_per_class; ++i) ds.records.push_back(make(cls, i));
  const int bg_videos = cfg.background_videos < 0 ? cfg.videos_per_class : cfg.background_videos;
  for (int i = 0; i < bg_videos; ++i) ds.records.push_back(make(kBackground, i));
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Largest-remainder apportionment of `n` items over `fractions`.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fr[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    used += counts[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best] + 1e-12) best = i;
    ++counts[best];
    rem[best] = -1;
    ++used;
  }
  return counts;
}

/// Class-stratified partition into train/val/test. Within each video class the
/// records are shuffled with `seed` and cut by largest-remainder quotas.
inline std::array<Dataset, 3> split_dataset(const Dataset& ds, const SplitFractions& f,
                                            std::uint64_t seed) {
  for (double x : {f.train, f.val, f.test})
    if (!(x >= 0.0)) throw std::invalid_argument("split fractions must be nonnegative");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    by_class[ds.records[i].video_label].push_back(i);

  std::array<Dataset, 3> out;
  const std::array<Split, 3> kinds{Split::train, Split::val, Split::test};
  std::array<std::vector<std::size_t>, 3> picked;
  std::mt19937_64 rng(seed);
  for (auto& [cls, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto counts = apportion(idx.size(), f);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < counts[s]; ++j) picked[s].push_back(idx[pos++]);
  }
  for (int s = 0; s < 3; ++s) {
    std::sort(picked[s].begin(), picked[s].end());
    out[s].class_names = ds.class_names;
    out[s].split = kinds[s];
    for (std::size_t i : picked[s]) out[s].records.push_back(ds.records[i]);
  }
  return out;
}

}  // namespace edr
