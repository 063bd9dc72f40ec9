// Command-line front end: data preparation, training, evaluation, ablations,
// augmentation, label correction and CAM export.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "edrnet/all.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

edr::RunConfig run_config(const Globals& g) {
  edr::RunConfig rc;
  if (!g.config.empty()) rc = edr::load_config(g.config);
  if (g.seed) rc.model.seed = rc.train.seed = *g.seed;
  return rc;
}

std::uint64_t seed_or(const Globals& g, std::uint64_t fallback) { return g.seed.value_or(fallback); }

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw CLI::ValidationError("--out", "an output path is required");
  return g.out;
}

void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << j.dump(2) << '\n';
}

json report_json(const edr::EvalReport& r, const std::vector<std::string>& names) {
  json per_class = json::object();
  for (const auto& [c, acc] : r.per_class_accuracy)
    per_class[c < static_cast<int>(names.size()) ? names[c] : std::to_string(c)] = acc;
  return {{"segment_accuracy", r.segment_accuracy},
          {"n_segments", r.n_segments},
          {"per_class_accuracy", per_class},
          {"confusion", r.confusion}};
}

/// Model dimensions that must follow the data rather than the config file.
void adopt_data_shape(edr::EdrConfig& m, const edr::Dataset& ds) {
  if (ds.records.empty()) return;
  const auto& r = ds.records.front();
  m.segments = r.segments();
  m.audio_dim = static_cast<int>(r.audio.cols());
  m.spatial = static_cast<int>(r.visual.dim(1));
  m.visual_dim = static_cast<int>(r.visual.dim(2));
  m.classes = ds.num_classes();
}

std::vector<edr::Branch> parse_sources(const std::string& s) {
  std::vector<edr::Branch> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "V") out.push_back(edr::Branch::visual);
    else if (item == "AV") out.push_back(edr::Branch::fused);
    else throw CLI::ValidationError("--sources", "expected V and/or AV, got '" + item + "'");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual event localization: EDRNet training and analysis tools"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config with model and training keys");
  app.add_option("--seed", g.seed, "Seed override for every random stream");
  app.add_option("--out", g.out, "Output file or directory");

  // data --------------------------------------------------------------------
  auto* data = app.add_subcommand("data", "Synthesize, validate or split datasets");
  data->require_subcommand(1);

  edr::SynthConfig synth;
  auto* synth_cmd = data->add_subcommand("synth", "Write a synthetic separable dataset");
  synth_cmd->add_option("--classes", synth.classes, "Foreground classes")->capture_default_str();
  synth_cmd->add_option("--videos-per-class", synth.videos_per_class)->capture_default_str();
  synth_cmd->add_option("--background-videos", synth.background_videos, "-1: same as per class")
      ->capture_default_str();
  synth_cmd->add_option("--audio-dim", synth.audio_dim)->capture_default_str();
  synth_cmd->add_option("--visual-dim", synth.visual_dim)->capture_default_str();
  synth_cmd->add_option("--spatial", synth.spatial)->capture_default_str();
  synth_cmd->add_option("--separation", synth.separation)->capture_default_str();
  synth_cmd->callback([&] {
    synth.seed = seed_or(g, 0);
    const auto ds = edr::synth_dataset(synth);
    edr::save_dataset(ds, require_out(g));
    std::cout << "wrote " << ds.records.size() << " videos to " << g.out << "\n";
  });

  std::string validate_in;
  auto* validate_cmd = data->add_subcommand("validate", "Check every record of a manifest");
  validate_cmd->add_option("manifest", validate_in)->required();
  validate_cmd->callback([&] {
    const auto ds = edr::load_dataset(validate_in);
    std::cout << ds.records.size() << " records valid\n";
  });

  std::string split_in;
  std::vector<double> fractions{0.8, 0.1, 0.1};
  auto* split_cmd = data->add_subcommand("split", "Class-stratified train/val/test split");
  split_cmd->add_option("--in", split_in)->required();
  split_cmd->add_option("--fractions", fractions, "train,val,test")->delimiter(',')->expected(3);
  split_cmd->callback([&] {
    const auto ds = edr::load_dataset(split_in);
    const auto parts = edr::split_dataset(ds, {fractions[0], fractions[1], fractions[2]}, seed_or(g, 0));
    const auto out = require_out(g);
    for (const auto& p : parts) {
      edr::save_dataset(p, out / edr::to_string(p.split));
      std::cout << edr::to_string(p.split) << ": " << p.records.size() << "\n";
    }
  });

  // train -------------------------------------------------------------------
  std::string train_in, val_in, test_in;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--train", train_in)->required();
  train_cmd->add_option("--val", val_in);
  train_cmd->add_option("--test", test_in);
  train_cmd->callback([&] {
    auto rc = run_config(g);
    const auto out = require_out(g);
    const auto tr = edr::load_dataset(train_in);
    const edr::Dataset val = val_in.empty() ? edr::Dataset{} : edr::load_dataset(val_in);
    adopt_data_shape(rc.model, tr);
    fs::create_directories(out);
    write_json(out / "config.json", edr::to_json(rc));
    std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
    const auto res = edr::train(tr, val, rc.model, rc.train, [&](const edr::EpochLog& e) {
      log << edr::epoch_json(e) << '\n' << std::flush;
      std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val " << e.val_acc << "\n";
    });
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    edr::checkpoint_save(res.params, rc.model, out / "checkpoint");
    std::cout << "best epoch " << res.best_epoch << " val acc " << res.best_val_acc << "\n";
    if (!test_in.empty()) {
      const auto test = edr::load_dataset(test_in);
      const auto rep = edr::evaluate(test, res.params, rc.model, rc.train.b2ilc, rc.train.wr);
      write_json(out / "test_report.json", report_json(rep, test.class_names));
      std::cout << "test segment accuracy " << rep.segment_accuracy << "\n";
    }
  });

  // eval --------------------------------------------------------------------
  std::string eval_ck, eval_data, eval_preds;
  bool eval_b2ilc = false;
  double eval_wr = 0.5;
  auto* eval_cmd = app.add_subcommand("eval", "Segment accuracy of a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_ck)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_flag("--b2ilc", eval_b2ilc, "Apply bag-to-instance label correction");
  eval_cmd->add_option("--wr", eval_wr)->capture_default_str();
  eval_cmd->add_option("--predictions", eval_preds, "Write raw hard predictions here");
  eval_cmd->callback([&] {
    const auto ck = edr::checkpoint_load(eval_ck);
    const auto ds = edr::load_dataset(eval_data);
    const auto preds = edr::predict(ds, ck.params, ck.config);
    const auto rep = edr::evaluate_predictions(ds, preds, eval_b2ilc, eval_wr);
    if (!eval_preds.empty()) {
      std::map<std::string, edr::PredictionSequence> by_id;
      for (std::size_t i = 0; i < ds.records.size(); ++i) by_id[ds.records[i].id] = preds[i];
      edr::write_predictions(eval_preds, by_id);
    }
    const auto j = report_json(rep, ds.class_names);
    if (!g.out.empty()) write_json(g.out, j);
    std::cout << "segment accuracy " << rep.segment_accuracy << " over " << rep.n_segments << " segments\n";
  });

  // ablate ------------------------------------------------------------------
  std::string suite, ab_train, ab_val, ab_test;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation suite");
  ablate_cmd->add_option("--suite", suite, "components|branches|sweep-k|sweep-L|sweep-d|augment-size|pe")
      ->required();
  ablate_cmd->add_option("--train", ab_train)->required();
  ablate_cmd->add_option("--val", ab_val)->required();
  ablate_cmd->add_option("--test", ab_test)->required();
  ablate_cmd->callback([&] {
    auto rc = run_config(g);
    const auto tr = edr::load_dataset(ab_train);
    adopt_data_shape(rc.model, tr);
    const auto rows = edr::run_ablation(edr::parse_suite(suite), tr, edr::load_dataset(ab_val),
                                        edr::load_dataset(ab_test), rc.model, rc.train);
    std::cout << edr::format_ablation(rows);
    if (!g.out.empty()) write_json(g.out, edr::ablation_json(rows));
  });

  // augment -----------------------------------------------------------------
  std::string aug_in;
  int per_class = 250;
  auto* augment_cmd = app.add_subcommand("augment", "State-machine video fusion of a training set");
  augment_cmd->add_option("--in", aug_in)->required();
  augment_cmd->add_option("--per-class", per_class)->capture_default_str();
  augment_cmd->callback([&] {
    const auto ds = edr::load_dataset(aug_in);
    const auto res = edr::augment_dataset(ds, per_class, seed_or(g, 0), ds.records.empty() ? edr::kSegments
                                                                                            : ds.records[0].segments());
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    const auto out = require_out(g);
    edr::save_dataset(res.fused, out);
    fs::create_directories(out / "provenance");
    for (std::size_t i = 0; i < res.fused.records.size(); ++i) {
      json slots = json::array();
      for (const auto& s : res.provenance[i])
        slots.push_back({{"state", edr::state_name(s.state)},
                         {"source_video", s.source},
                         {"seg_range", {s.first, s.last}}});
      write_json(out / "provenance" / (res.fused.records[i].id + ".json"), slots);
    }
    std::cout << "wrote " << res.fused.records.size() << " fused videos to " << out.string() << "\n";
  });

  // correct -----------------------------------------------------------------
  std::string corr_in, corr_out;
  double corr_wr = 0.5;
  int corr_bg = edr::kBackground;
  auto* correct_cmd = app.add_subcommand("correct", "Bag-to-instance label correction of a prediction file");
  correct_cmd->add_option("--in", corr_in)->required();
  correct_cmd->add_option("--wr", corr_wr)->capture_default_str();
  correct_cmd->add_option("--background", corr_bg)->capture_default_str();
  correct_cmd->callback([&] {
    auto preds = edr::read_predictions(corr_in);
    for (auto& [id, p] : preds) p = edr::correct(p, corr_wr, corr_bg);
    edr::write_predictions(require_out(g), preds);
  });

  // cam ---------------------------------------------------------------------
  std::string cam_ck, cam_data, cam_sources = "V,AV";
  int cam_limit = -1;
  auto* cam_cmd = app.add_subcommand("cam", "Export class activation maps as PGM images");
  cam_cmd->add_option("--checkpoint", cam_ck)->required();
  cam_cmd->add_option("--data", cam_data)->required();
  cam_cmd->add_option("--sources", cam_sources)->capture_default_str();
  cam_cmd->add_option("--limit", cam_limit, "Only the first n videos");
  cam_cmd->callback([&] {
    const auto ck = edr::checkpoint_load(cam_ck);
    auto ds = edr::load_dataset(cam_data);
    if (cam_limit >= 0 && static_cast<std::size_t>(cam_limit) < ds.records.size())
      ds.records.resize(static_cast<std::size_t>(cam_limit));
    const auto files = edr::export_cams(ds, ck.params, ck.config, require_out(g), parse_sources(cam_sources));
    std::cout << "wrote " << files.size() << " maps\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
