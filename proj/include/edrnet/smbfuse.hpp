#pragma once

// State-machine based video fusion. Event progress checkpoints (start,
// continue, end) and background stretches of one or two segments are cut out
// of same-class training videos, a state machine draws a fresh N-segment
// template, and the template is filled with randomly chosen clips.

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrnet/avedata.hpp"
#include "edrnet/tensor.hpp"

namespace edr {

enum class StateKind : int { bg1, bg2, start1, start2, continue1, continue2, end1, end2 };

inline constexpr int kStateKinds = 8;
inline constexpr std::array<StateKind, kStateKinds> kAllStates{
    StateKind::bg1,       StateKind::bg2,       StateKind::start1, StateKind::start2,
    StateKind::continue1, StateKind::continue2, StateKind::end1,   StateKind::end2};

inline const char* state_name(StateKind s) {
  static constexpr const char* names[] = {"BG_1",       "BG_2",       "START_1", "START_2",
                                          "CONTINUE_1", "CONTINUE_2", "END_1",   "END_2"};
  return names[static_cast<int>(s)];
}

inline StateKind parse_state(const std::string& name) {
  for (StateKind s : kAllStates)
    if (name == state_name(s)) return s;
  throw std::invalid_argument("unknown state '" + name + "'");
}

/// Foreground flags of the extracted (bracketed) segments of a state.
inline const std::vector<bool>& state_pattern(StateKind s) {
  static const std::array<std::vector<bool>, kStateKinds> patterns{{
      {false}, {false, false}, {true}, {false, true}, {true}, {true, true}, {true}, {true, false}}};
  return patterns[static_cast<int>(s)];
}

inline int state_length(StateKind s) { return static_cast<int>(state_pattern(s).size()); }

struct StateClip {
  StateKind state = StateKind::bg1;
  std::string source;
  int first = 0;
  int last = 0;
  Tensor<float> audio;   // len x d_a
  Tensor<float> visual;  // len x S x d_v
  std::vector<int> labels;
};

/// Every occurrence of every search pattern in the record's label string,
/// overlapping occurrences included.
inline std::vector<StateClip> extract_states(const VideoRecord& r, int background = kBackground) {
  const int n = r.segments();
  std::vector<bool> fg(n);
  for (int t = 0; t < n; ++t) fg[t] = r.seg_labels[t] != background;
  auto at = [&](int t) { return t >= 0 && t < n && fg[t]; };
  auto bg = [&](int t) { return t >= 0 && t < n && !fg[t]; };

  std::vector<StateClip> clips;
  auto emit = [&](StateKind s, int first) {
    StateClip c;
    c.state = s;
    c.source = r.id;
    c.first = first;
    c.last = first + state_length(s) - 1;
    c.audio = slice_rows(r.audio, first, state_length(s));
    c.visual = slice_rows(r.visual, first, state_length(s));
    c.labels.assign(r.seg_labels.begin() + first, r.seg_labels.begin() + c.last + 1);
    clips.push_back(std::move(c));
  };
  for (int t = 0; t < n; ++t)
    if (bg(t)) emit(StateKind::bg1, t);
  for (int t = 0; t + 1 < n; ++t)
    if (bg(t) && bg(t + 1)) emit(StateKind::bg2, t);
  if (at(0)) emit(StateKind::start1, 0);
  for (int t = 0; t + 1 < n; ++t)
    if (bg(t) && at(t + 1)) emit(StateKind::start2, t);
  for (int t = 1; t + 1 < n; ++t)
    if (at(t - 1) && at(t) && at(t + 1)) emit(StateKind::continue1, t);
  for (int t = 1; t + 2 < n; ++t)
    if (at(t - 1) && at(t) && at(t + 1) && at(t + 2)) emit(StateKind::continue2, t);
  if (at(n - 1)) emit(StateKind::end1, n - 1);
  for (int t = 0; t + 1 < n; ++t)
    if (at(t) && bg(t + 1)) emit(StateKind::end2, t);
  return clips;
}

using StateDatabase = std::array<std::vector<StateClip>, kStateKinds>;

inline StateDatabase build_databases(const Dataset& ds, int event_class) {
  StateDatabase db;
  for (const auto& r : ds.records) {
    if (r.video_label != event_class) continue;
    for (auto& c : extract_states(r, ds.background())) db[static_cast<int>(c.state)].push_back(std::move(c));
  }
  return db;
}

inline std::array<bool, kStateKinds> available_states(const StateDatabase& db) {
  std::array<bool, kStateKinds> out{};
  for (int s = 0; s < kStateKinds; ++s) out[s] = !db[s].empty();
  return out;
}

/// Table-driven transition relation. Background states appear twice, before
/// and after the event, so a sequence holds exactly one event.
struct StateMachine {
  struct Node {
    StateKind kind;
    bool initial = false;
    bool terminal = false;
    std::vector<int> next;
  };
  std::vector<Node> nodes;

  static const StateMachine& standard() {
    static const StateMachine m = [] {
      const std::vector<int> pre{0, 1, 3}, event{4, 5, 6, 7}, post{8, 9};
      StateMachine sm;
      sm.nodes = {
          {StateKind::bg1, true, false, pre},         // 0: background before the event
          {StateKind::bg2, true, false, pre},         // 1
          {StateKind::start1, true, false, event},    // 2
          {StateKind::start2, true, false, event},    // 3
          {StateKind::continue1, false, false, event},  // 4
          {StateKind::continue2, false, false, event},  // 5
          {StateKind::end1, false, true, {}},         // 6
          {StateKind::end2, false, true, post},       // 7
          {StateKind::bg1, false, true, post},        // 8: background after the event
          {StateKind::bg2, false, true, post},        // 9
      };
      return sm;
    }();
    return m;
  }
};

struct StateSequence {
  std::vector<StateKind> states;
  int event_class = 0;

  int total_length() const {
    int n = 0;
    for (StateKind s : states) n += state_length(s);
    return n;
  }
  std::vector<bool> foreground_mask() const {
    std::vector<bool> m;
    for (StateKind s : states) m.insert(m.end(), state_pattern(s).begin(), state_pattern(s).end());
    return m;
  }
};

class FusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Random walk over the machine using only available states, restricted at
/// every step to moves from which exactly `n` segments remain reachable.
template <typename Rng>
std::vector<StateKind> generate_states(int n, const std::array<bool, kStateKinds>& available, Rng& rng,
                                       const StateMachine& sm = StateMachine::standard()) {
  const int nodes = static_cast<int>(sm.nodes.size());
  auto usable = [&](int v) { return available[static_cast<int>(sm.nodes[v].kind)]; };
  auto len = [&](int v) { return state_length(sm.nodes[v].kind); };
  // finishable[v][r]: after emitting node v with r segments left, a terminal can be reached exactly.
  std::vector<std::vector<char>> finishable(nodes, std::vector<char>(n + 1, 0));
  for (int r = 0; r <= n; ++r)
    for (int v = 0; v < nodes; ++v) {
      if (r == 0) {
        finishable[v][r] = sm.nodes[v].terminal;
        continue;
      }
      for (int w : sm.nodes[v].next)
        if (usable(w) && len(w) <= r && finishable[w][r - len(w)]) {
          finishable[v][r] = 1;
          break;
        }
    }

  auto pick = [&](const std::vector<int>& cands) {
    std::uniform_int_distribution<std::size_t> u(0, cands.size() - 1);
    return cands[u(rng)];
  };
  std::vector<int> cands;
  for (int v = 0; v < nodes; ++v)
    if (sm.nodes[v].initial && usable(v) && len(v) <= n && finishable[v][n - len(v)]) cands.push_back(v);
  if (cands.empty()) throw FusionError("no valid state sequence for the available states");

  std::vector<StateKind> out;
  int v = pick(cands);
  int remaining = n - len(v);
  out.push_back(sm.nodes[v].kind);
  while (remaining > 0) {
    cands.clear();
    for (int w : sm.nodes[v].next)
      if (usable(w) && len(w) <= remaining && finishable[w][remaining - len(w)]) cands.push_back(w);
    v = pick(cands);
    remaining -= len(v);
    out.push_back(sm.nodes[v].kind);
  }
  return out;
}

template <typename Rng>
StateSequence generate_state_sequence(int n, const std::array<bool, kStateKinds>& available, Rng& rng,
                                      int event_class = 0) {
  return {generate_states(n, available, rng), event_class};
}

struct SlotProvenance {
  StateKind state = StateKind::bg1;
  std::string source;
  int first = 0;
  int last = 0;
};

struct FusedVideo {
  VideoRecord record;
  std::vector<SlotProvenance> slots;
};

/// Fills each state slot with a clip drawn uniformly (with replacement) from
/// that state's database and concatenates features and labels.
template <typename Rng>
FusedVideo fuse_video(const StateSequence& seq, const StateDatabase& db, Rng& rng, std::string id) {
  FusedVideo out;
  std::vector<Tensor<float>> audio, visual;
  out.record.id = std::move(id);
  out.record.video_label = seq.event_class;
  for (StateKind s : seq.states) {
    const auto& clips = db[static_cast<int>(s)];
    if (clips.empty()) throw FusionError(std::string("empty database for state ") + state_name(s));
    std::uniform_int_distribution<std::size_t> u(0, clips.size() - 1);
    const StateClip& c = clips[u(rng)];
    audio.push_back(c.audio);
    visual.push_back(c.visual);
    out.record.seg_labels.insert(out.record.seg_labels.end(), c.labels.begin(), c.labels.end());
    out.slots.push_back({s, c.source, c.first, c.last});
  }
  out.record.audio = concat_rows<float>(audio);
  out.record.visual = concat_rows<float>(visual);
  return out;
}

struct AugmentResult {
  Dataset fused;
  std::vector<std::vector<SlotProvenance>> provenance;  // parallel to fused.records
  std::vector<std::string> warnings;
};

/// Independent generator stream per class derived from the master seed.
inline std::mt19937_64 class_stream(std::uint64_t seed, int event_class) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(event_class), 0x5eedu};
  return std::mt19937_64(seq);
}

/// `per_class` fused videos for every foreground class present in `train`.
inline AugmentResult augment_dataset(const Dataset& train, int per_class, std::uint64_t seed,
                                     int segments = kSegments) {
  if (per_class < 0) throw std::invalid_argument("augment: per-class count must be >= 0");
  AugmentResult res;
  res.fused.class_names = train.class_names;
  res.fused.split = train.split;
  if (per_class == 0) return res;
  std::map<int, int> present;
  for (const auto& r : train.records)
    if (r.video_label != train.background()) ++present[r.video_label];
  for (const auto& [cls, count] : present) {
    const StateDatabase db = build_databases(train, cls);
    auto rng = class_stream(seed, cls);
    try {
      for (int i = 0; i < per_class; ++i) {
        const auto seq = generate_state_sequence(segments, available_states(db), rng, cls);
        auto fv = fuse_video(seq, db, rng, "fused_" + std::to_string(cls) + "_" + std::to_string(i));
        res.fused.records.push_back(std::move(fv.record));
        res.provenance.push_back(std::move(fv.slots));
      }
    } catch (const FusionError& e) {
      res.warnings.push_back("class " + std::to_string(cls) + " skipped: " + e.what());
    }
  }
  return res;
}

}  // namespace edr
