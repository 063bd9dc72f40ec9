#include <iostream>

#include <gtest/gtest.h>

#include "gradcheck.hpp"

using gradcheck::Objective;

class NetworkGradient : public ::testing::TestWithParam<Objective> {};

TEST_P(NetworkGradient, MatchesCentralDifferences) {
  const auto cfg = gradcheck::small_config();
  const auto r = gradcheck::small_record(cfg);
  const auto params = edr::ModelParams<double>::init(cfg);
  const auto res = gradcheck::check(GetParam(), r, params, cfg, 300);
  EXPECT_GE(res.pass_rate(), 0.99) << gradcheck::name(GetParam()) << ": worst " << res.worst << " at "
                                   << res.worst_where;
  // Guard against a vacuous pass where most sampled gradients vanish.
  EXPECT_GE(res.nonzero, res.sampled / 3) << gradcheck::name(GetParam());
  std::cout << gradcheck::name(GetParam()) << ": " << res.passed << "/" << res.sampled << " ("
            << res.nonzero << " nonzero), worst " << res.worst << "\n";
}

INSTANTIATE_TEST_SUITE_P(AllObjectives, NetworkGradient, ::testing::ValuesIn(gradcheck::kAll),
                         [](const auto& info) {
                           std::string n = gradcheck::name(info.param);
                           std::erase(n, ' ');
                           return n;
                         });

// Single-branch and no-fusion variants exercise the other backward routes.
TEST(NetworkGradient, BranchVariants) {
  const edr::BranchSet variants[] = {{true, false, false}, {false, true, false}, {true, false, true},
                                     {false, true, true},  {true, true, false}};
  for (const auto& b : variants) {
    auto cfg = gradcheck::small_config();
    cfg.branches = b;
    const auto r = gradcheck::small_record(cfg);
    const auto res = gradcheck::check(Objective::sel, r, edr::ModelParams<double>::init(cfg), cfg, 150);
    EXPECT_GE(res.pass_rate(), 0.99) << b.audio << b.visual << b.fused << " worst " << res.worst << " at "
                                     << res.worst_where;
  }
}

TEST(NetworkGradient, OtherKernelSizesAndNoPositionalEncoding) {
  for (int k : {2, 4, 5}) {
    auto cfg = gradcheck::small_config();
    cfg.k = k;
    cfg.layers = edr::max_layers(k, 10);
    cfg.positional_encoding = k != 4;
    const auto r = gradcheck::small_record(cfg);
    const auto res = gradcheck::check(Objective::sel, r, edr::ModelParams<double>::init(cfg), cfg, 150);
    EXPECT_GE(res.pass_rate(), 0.99) << "k=" << k << " worst " << res.worst << " at " << res.worst_where;
  }
}

TEST(NetworkGradient, FloatObjectiveAgreesWithDouble) {
  const auto cfg = gradcheck::small_config();
  const auto r = gradcheck::small_record(cfg);
  const auto pd = edr::ModelParams<double>::init(cfg);
  const auto pf = edr::ModelParams<float>::init(cfg);
  edr::LossWeights w;
  const double ld = edr::video_objective<double>(r, pd, cfg, edr::Task::sel, w);
  const float lf = edr::video_objective<float>(r, pf, cfg, edr::Task::sel, w);
  EXPECT_NEAR(ld, lf, 1e-4 * std::max(1.0, std::abs(ld)));
}
