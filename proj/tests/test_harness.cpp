#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int BG = edr::kBackground;

edr::Dataset small_synth(int classes = 2, int per_class = 4, std::uint64_t seed = 5) {
  edr::SynthConfig c;
  c.classes = classes;
  c.videos_per_class = per_class;
  c.audio_dim = 4;
  c.visual_dim = 4;
  c.spatial = 4;
  c.seed = seed;
  return edr::synth_dataset(c);
}

edr::TrainConfig quick_train(int epochs = 3) {
  edr::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.optimizer.lr = 3e-3;
  t.seed = 7;
  return t;
}

bool same_params(const edr::ModelParams<float>& a, const edr::ModelParams<float>& b) { return a == b; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, ParsesOverridesAndRoundTrips) {
  const auto cfg = edr::parse_config(nlohmann::json{{"d", 16}, {"task", "WSEL"}, {"lr", 0.01}, {"seed", 9}});
  EXPECT_EQ(cfg.model.width, 16);
  EXPECT_EQ(cfg.train.task, edr::Task::wsel);
  EXPECT_DOUBLE_EQ(cfg.train.optimizer.lr, 0.01);
  EXPECT_EQ(cfg.model.seed, 9u);
  EXPECT_EQ(cfg.train.seed, 9u);
  const auto again = edr::parse_config(edr::to_json(cfg));
  EXPECT_EQ(edr::to_json(again), edr::to_json(cfg));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  try {
    edr::parse_config(nlohmann::json{{"depth", 3}});
    FAIL();
  } catch (const edr::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos);
  }
  EXPECT_THROW(edr::parse_config(nlohmann::json{{"d", "wide"}}), edr::ConfigError);
  EXPECT_THROW(edr::parse_config(nlohmann::json{{"batch_size", 0}}), edr::ConfigError);
  EXPECT_THROW(edr::parse_config(nlohmann::json{{"optimizer", "sgd"}}), edr::ConfigError);
  EXPECT_THROW(edr::parse_config(nlohmann::json{{"task", "WSEL"}, {"augment", true}}), edr::ConfigError);
  EXPECT_THROW(edr::parse_config(nlohmann::json{{"k", 6}, {"L", 2}}), edr::ConfigError);
}

TEST(Config, LoadReportsMalformedFiles) {
  const auto dir = testutil::scratch_dir();
  std::ofstream(dir / "bad.json") << "{\"d\": ";
  EXPECT_THROW(edr::load_config(dir / "bad.json"), edr::ConfigError);
  EXPECT_THROW(edr::load_config(dir / "missing.json"), edr::ConfigError);
}

TEST(Config, DifferingFields) {
  auto a = edr::to_json(testutil::tiny_config());
  auto b = a;
  b["d"] = 16;
  b["k"] = 2;
  EXPECT_EQ(edr::differing_fields(a, b), (std::vector<std::string>{"d", "k"}));
  EXPECT_TRUE(edr::differing_fields(a, a).empty());
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = testutil::scratch_dir();
  const auto cfg = testutil::tiny_config();
  const auto params = edr::ModelParams<float>::init(cfg);
  edr::checkpoint_save(params, cfg, dir / "ck");
  const auto ck = edr::checkpoint_load(dir / "ck");
  EXPECT_EQ(edr::to_json(ck.config), edr::to_json(cfg));
  EXPECT_TRUE(same_params(ck.params, params));
  const auto r = testutil::random_record(cfg, std::vector<int>(10, BG), BG, 3);
  EXPECT_EQ(edr::forward(r, ck.params, cfg).probs, edr::forward(r, params, cfg).probs);
  EXPECT_TRUE(same_params(edr::checkpoint_load(dir / "ck", cfg), params));
}

TEST(Checkpoint, CorruptIndexAndBlobs) {
  const auto dir = testutil::scratch_dir();
  const auto cfg = testutil::tiny_config();
  edr::checkpoint_save(edr::ModelParams<float>::init(cfg), cfg, dir / "ck");
  EXPECT_THROW(edr::checkpoint_load(dir / "nothing"), edr::CheckpointError);
  fs::copy(dir / "ck", dir / "trunc", fs::copy_options::recursive);
  fs::resize_file(dir / "trunc" / "params" / "classifier.weight.avet", 20);
  try {
    edr::checkpoint_load(dir / "trunc");
    FAIL();
  } catch (const edr::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("classifier.weight"), std::string::npos) << e.what();
  }
  std::ofstream(dir / "ck" / "index.json") << "not json";
  EXPECT_THROW(edr::checkpoint_load(dir / "ck"), edr::CheckpointError);
}

TEST(Checkpoint, MismatchedConfigNamesTheFields) {
  const auto dir = testutil::scratch_dir();
  const auto cfg = testutil::tiny_config();
  edr::checkpoint_save(edr::ModelParams<float>::init(cfg), cfg, dir);
  auto other = cfg;
  other.width = 16;
  try {
    edr::checkpoint_load(dir, other);
    FAIL();
  } catch (const edr::CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("d (checkpoint 8, expected 16)"), std::string::npos) << msg;
  }
  other = cfg;
  other.seed = 1234;  // seeds only affect initialisation
  EXPECT_NO_THROW(edr::checkpoint_load(dir, other));
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, PerfectPredictionsScoreOne) {
  const auto ds = small_synth();
  std::vector<edr::PredictionSequence> preds;
  for (const auto& r : ds.records) preds.push_back({r.seg_labels, {}});
  const auto rep = edr::evaluate_predictions(ds, preds, false);
  EXPECT_DOUBLE_EQ(rep.segment_accuracy, 1.0);
  EXPECT_EQ(rep.n_segments, static_cast<long>(10 * ds.records.size()));
  for (const auto& [c, acc] : rep.per_class_accuracy) EXPECT_DOUBLE_EQ(acc, 1.0) << c;
  EXPECT_DOUBLE_EQ(edr::evaluate_predictions(ds, preds, true).segment_accuracy, 1.0);
}

TEST(Evaluate, UniformRandomPredictionsNearChance) {
  const auto ds = small_synth(28, 40, 2);  // 1160 videos, 11600 segments
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> u(0, 28);
  std::vector<edr::PredictionSequence> preds;
  for (const auto& r : ds.records) {
    edr::PredictionSequence p;
    for (std::size_t t = 0; t < r.seg_labels.size(); ++t) p.hard.push_back(u(rng));
    preds.push_back(std::move(p));
  }
  const auto rep = edr::evaluate_predictions(ds, preds, false);
  const double p = 1.0 / 29.0, sigma = std::sqrt(p * (1 - p) / static_cast<double>(rep.n_segments));
  EXPECT_GE(rep.n_segments, 10000);
  EXPECT_NEAR(rep.segment_accuracy, p, 3 * sigma);
}

TEST(Evaluate, AccuracyIsConfusionTraceOverTotal) {
  const std::vector<std::vector<int>> truth{{0, 0, 1, BG}, {2, 2, BG, BG}};
  const std::vector<std::vector<int>> pred{{0, 1, 1, BG}, {2, 0, 0, BG}};
  const auto rep = edr::make_report(truth, pred, 29);
  long trace = 0, total = 0;
  for (int i = 0; i < 29; ++i)
    for (int j = 0; j < 29; ++j) {
      total += rep.confusion[i][j];
      if (i == j) trace += rep.confusion[i][j];
    }
  EXPECT_EQ(total, 8);
  EXPECT_DOUBLE_EQ(rep.segment_accuracy, static_cast<double>(trace) / static_cast<double>(total));
  EXPECT_DOUBLE_EQ(rep.segment_accuracy, 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(rep.per_class_accuracy.at(0), 0.5);
  EXPECT_DOUBLE_EQ(rep.per_class_accuracy.at(BG), 2.0 / 3.0);
  EXPECT_EQ(rep.per_class_accuracy.count(5), 0u);
  EXPECT_THROW(edr::make_report(truth, {{0}}, 29), std::invalid_argument);
}

TEST(Evaluate, CorrectionOnlyTouchesBagInteriors) {
  const auto ds = small_synth(3, 6, 4);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> u(0, 3);
  std::vector<edr::PredictionSequence> preds;
  for (const auto& r : ds.records) {
    edr::PredictionSequence p;
    for (std::size_t t = 0; t < r.seg_labels.size(); ++t) {
      const int v = u(rng);
      p.hard.push_back(v == 3 ? BG : v);
    }
    preds.push_back(p);
  }
  for (const auto& p : preds) {
    const auto fixed = edr::correct(p.hard);
    std::vector<bool> in_bag(p.hard.size(), false);
    for (const auto& bag : edr::form_bags(p.hard))
      for (int t = bag.first; t <= bag.last; ++t) in_bag[t] = true;
    for (std::size_t t = 0; t < p.hard.size(); ++t)
      if (!in_bag[t]) {
        EXPECT_EQ(fixed[t], p.hard[t]);
      }
  }
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, ZeroLearningRateLeavesParametersAndLossUnchanged) {
  const auto ds = small_synth();
  auto cfg = testutil::tiny_config();
  auto tc = quick_train(3);
  tc.optimizer.lr = 0.0;
  const auto res = edr::train(ds, {}, cfg, tc);
  EXPECT_TRUE(same_params(res.params, edr::ModelParams<float>::init(cfg)));
  ASSERT_EQ(res.log.size(), 3u);
  EXPECT_DOUBLE_EQ(res.log[0].train_loss, res.log[1].train_loss);
  EXPECT_DOUBLE_EQ(res.log[1].train_loss, res.log[2].train_loss);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto ds = small_synth();
  const auto cfg = testutil::tiny_config();
  const auto a = edr::train(ds, ds, cfg, quick_train());
  const auto b = edr::train(ds, ds, cfg, quick_train());
  EXPECT_TRUE(same_params(a.params, b.params));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
  auto other = quick_train();
  other.seed = 8;
  EXPECT_FALSE(same_params(a.params, edr::train(ds, ds, cfg, other).params));
}

TEST(Train, SingleBatchLossDecreasesOverFirstSteps) {
  const auto ds = small_synth(2, 2, 6);
  const auto cfg = testutil::tiny_config();
  for (edr::Task task : {edr::Task::sel, edr::Task::wsel}) {
    auto params = edr::ModelParams<float>::init(cfg);
    edr::AdamConfig opt;
    opt.lr = 1e-3;
    edr::Adam adam(cfg, opt);
    double prev = INFINITY;
    for (int step = 0; step < 5; ++step) {
      auto batch = edr::ModelParams<float>::zeros(cfg);
      double loss = 0;
      for (const auto& r : ds.records) {
        edr::ModelParams<float> g;
        loss += edr::video_objective(r, params, cfg, task, edr::LossWeights{}, &g);
        edr::add_into(batch, g, 1.0f / static_cast<float>(ds.records.size()));
      }
      loss /= static_cast<double>(ds.records.size());
      EXPECT_LT(loss, prev) << edr::to_string(task) << " step " << step;
      prev = loss;
      adam.step(params, batch, opt.lr);
    }
  }
}

TEST(Train, NonFiniteLossRaises) {
  auto ds = small_synth();
  ds.records[1].audio(3, 0) = std::nanf("");
  try {
    edr::train(ds, {}, testutil::tiny_config(), quick_train());
    FAIL();
  } catch (const edr::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find(ds.records[1].id), std::string::npos) << e.what();
  }
}

TEST(Train, KeepsBestValidationParamsAndStopsEarly) {
  const auto ds = small_synth();
  auto tc = quick_train(20);
  tc.patience = 2;
  std::vector<edr::EpochLog> seen;
  const auto res = edr::train(ds, ds, testutil::tiny_config(), tc, [&](const auto& e) { seen.push_back(e); });
  EXPECT_EQ(seen.size(), res.log.size());
  double best = -1;
  int best_epoch = 0;
  for (const auto& e : res.log)
    if (e.val_acc > best) best = e.val_acc, best_epoch = e.epoch;
  EXPECT_EQ(res.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(res.best_val_acc, best);
  EXPECT_DOUBLE_EQ(edr::evaluate(ds, res.params, testutil::tiny_config(), false).segment_accuracy, best);
  if (static_cast<int>(res.log.size()) < tc.epochs) {
    EXPECT_EQ(res.log.back().epoch - res.best_epoch, tc.patience);
  }
}

TEST(Train, LearningRateDecaysStepwise) {
  auto tc = quick_train(5);
  tc.lr_decay_every = 2;
  tc.lr_decay_factor = 0.5;
  const auto res = edr::train(small_synth(1, 2), {}, testutil::tiny_config(), tc);
  std::vector<double> lrs;
  for (const auto& e : res.log) lrs.push_back(e.lr);
  EXPECT_EQ(lrs, (std::vector<double>{3e-3, 3e-3, 1.5e-3, 1.5e-3, 7.5e-4}));
}

TEST(Train, AugmentationAddsFusedVideos) {
  auto tc = quick_train(1);
  tc.augment = true;
  tc.augment_per_class = 3;
  tc.optimizer.lr = 0.0;
  const auto ds = small_synth();
  const auto res = edr::train(ds, {}, testutil::tiny_config(), tc);
  EXPECT_TRUE(res.warnings.empty());
  EXPECT_EQ(res.log.size(), 1u);
}

// ---------------------------------------------------------------------------
// Ablations

TEST(Ablation, RowsDifferOnlyInToggledKeys) {
  const auto base = testutil::tiny_config();
  const auto tc = quick_train();
  for (auto suite : {edr::AblationSuite::components, edr::AblationSuite::branches, edr::AblationSuite::sweep_k,
                     edr::AblationSuite::sweep_L, edr::AblationSuite::sweep_d, edr::AblationSuite::augment_size,
                     edr::AblationSuite::positional_encoding}) {
    const auto rows = edr::plan_ablation(suite, base, tc);
    ASSERT_FALSE(rows.empty());
    const auto ref = edr::config_fingerprint(base, tc);
    std::set<std::string> changed;
    for (const auto& row : rows) {
      const auto fp = edr::config_fingerprint(row.model, row.train);
      for (const auto& [k, v] : fp) {
        if (v == ref.at(k)) continue;
        changed.insert(k);
        EXPECT_NE(std::find(row.toggled.begin(), row.toggled.end(), k), row.toggled.end())
            << row.name << " changes " << k;
      }
    }
    EXPECT_FALSE(changed.empty());
  }
}

TEST(Ablation, SweepKPairsWithMaximalDepth) {
  const auto rows = edr::plan_ablation(edr::AblationSuite::sweep_k, testutil::tiny_config(), quick_train());
  std::vector<std::pair<int, int>> kl;
  for (const auto& r : rows) kl.emplace_back(r.model.k, r.model.layers);
  EXPECT_EQ(kl, (std::vector<std::pair<int, int>>{{2, 9}, {3, 4}, {4, 3}, {5, 2}}));
  EXPECT_EQ(edr::plan_ablation(edr::AblationSuite::branches, testutil::tiny_config(), quick_train()).size(), 6u);
  EXPECT_THROW(edr::parse_suite("everything"), edr::ConfigError);
}

TEST(Ablation, BranchRowsPopulateMatchingColumns) {
  const auto ds = small_synth();
  auto tc = quick_train(1);
  const auto rows = edr::run_ablation(edr::AblationSuite::branches, ds, ds, ds, testutil::tiny_config(), tc);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_TRUE(rows[0].acc_audio && !rows[0].acc_visual && !rows[0].acc_gated);
  EXPECT_TRUE(!rows[1].acc_audio && rows[1].acc_visual && !rows[1].acc_gated);
  EXPECT_TRUE(rows[5].acc_audio && rows[5].acc_visual && rows[5].acc_gated);
  EXPECT_DOUBLE_EQ(*rows[0].acc_audio, rows[0].report.segment_accuracy);
  const auto table = edr::format_ablation(rows);
  EXPECT_NE(table.find("A+V+Dual-Phase Fusion"), std::string::npos);
  const auto j = edr::ablation_json(rows);
  ASSERT_EQ(j.size(), 6u);
  EXPECT_FALSE(j[0].contains("acc_visual"));
  EXPECT_TRUE(j[5].contains("acc_gated"));
}

// ---------------------------------------------------------------------------
// Exports

TEST(Export, CamFilesPerSourceAndWindow) {
  const auto dir = testutil::scratch_dir();
  const auto cfg = testutil::tiny_config();
  const auto params = edr::ModelParams<float>::init(cfg);
  auto ds = small_synth(1, 2);
  ds.records.resize(2);
  const auto files = edr::export_cams(ds, params, cfg, dir);
  ASSERT_EQ(files.size(), 2u * 2u * 8u);  // videos x {V, AV} x windows
  EXPECT_EQ(files.front().filename(), ds.records[0].id + "_V_0.pgm");
  EXPECT_EQ(files[8].filename(), ds.records[0].id + "_AV_0.pgm");
  std::ifstream is(files.front(), std::ios::binary);
  std::string magic;
  int w, h, maxv;
  is >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 2);
  EXPECT_EQ(h, 2);
  EXPECT_EQ(maxv, 255);
  EXPECT_EQ(fs::file_size(files.front()), std::string("P5\n2 2\n255\n").size() + 4);
  EXPECT_EQ(edr::export_cams(ds, params, cfg, dir / "again"), [&] {
    auto v = files;
    for (auto& f : v) f = dir / "again" / f.filename();
    return v;
  }());
  edr::Dataset empty;
  EXPECT_TRUE(edr::export_cams(empty, params, cfg, dir / "none").empty());
  EXPECT_FALSE(fs::exists(dir / "none"));
}

TEST(Export, PredictionFilesRoundTrip) {
  const auto dir = testutil::scratch_dir();
  std::map<std::string, edr::PredictionSequence> preds;
  preds["a"].hard = {BG, 1, 1, 2};
  preds["b"].hard = {0, 0};
  edr::write_predictions(dir / "p.json", preds);
  const auto back = edr::read_predictions(dir / "p.json");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("a").hard, preds["a"].hard);
  EXPECT_EQ(back.at("b").hard, preds["b"].hard);

  edr::Tensor<float> probs({2, 3}, 0.25f);
  edr::write_blob(dir / "b.avet", probs);
  std::ofstream(dir / "q.json") << R"({"v": {"hard": [0, 2], "probs_blob": "b.avet"}})";
  const auto q = edr::read_predictions(dir / "q.json");
  EXPECT_EQ(q.at("v").probs, probs);
}

TEST(Export, EpochJsonLines) {
  EXPECT_EQ(nlohmann::json::parse(edr::epoch_json({3, 0.5, 0.75, 1e-3})),
            (nlohmann::json{{"epoch", 3}, {"train_loss", 0.5}, {"val_acc", 0.75}}));
  EXPECT_TRUE(nlohmann::json::parse(edr::epoch_json({1, 0.5, std::nan(""), 1e-3}))["val_acc"].is_null());
}
