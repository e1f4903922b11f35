#include "clickforge/trainer.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace clickforge;

namespace {

Dataset tiny_dataset(int n = 6) {
  DomainSpec spec;
  spec.height = spec.width = 32;
  spec.seed = 12;
  return generate_dataset(spec, n);
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST(Trainer, PhaseOneTouchesOnlyBsm) {
  const ModelConfig model = cftest::small_model();
  const ParamSet<Real> bsm = train_bsm(tiny_dataset(), quick_config(), model);
  const auto init = partition(init_params<Real>(model));
  EXPECT_EQ(partition(bsm).adm, init.adm);
  EXPECT_FALSE(partition(bsm).bsm == init.bsm);
}

TEST(Trainer, PhaseTwoFreezesBsmBitExactly) {
  const ModelConfig model = cftest::small_model();
  const Dataset data = tiny_dataset();
  const ParamSet<Real> bsm = train_bsm(data, quick_config(), model);
  const ParamSet<Real> both = train_adm(data, bsm, quick_config(), model);
  EXPECT_EQ(partition(both).bsm, partition(bsm).bsm);
  EXPECT_FALSE(partition(both).adm == partition(bsm).adm);
}

TEST(Trainer, DeterministicForFixedSeed) {
  const ModelConfig model = cftest::small_model();
  const Dataset data = tiny_dataset();
  for (OptimizerKind kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    TrainConfig cfg = quick_config();
    cfg.optimizer = kind;
    EXPECT_EQ(train_bsm(data, cfg, model), train_bsm(data, cfg, model)) << to_string(kind);
  }
  TrainConfig other = quick_config();
  other.seed = 5;
  EXPECT_FALSE(train_bsm(data, quick_config(), model) == train_bsm(data, other, model));
}

TEST(Trainer, LogHasOneRecordPerEpoch) {
  const ModelConfig model = cftest::small_model();
  std::ostringstream sink;
  TrainLog log;
  log.sink = &sink;
  const Dataset data = tiny_dataset();
  const auto bsm = train_bsm(data, quick_config(), model, &log);
  train_adm(data, bsm, quick_config(), model, &log);
  ASSERT_EQ(log.epochs.size(), 4u);
  EXPECT_EQ(log.epochs[0].phase, TrainPhase::kBsm);
  EXPECT_EQ(log.epochs[3].phase, TrainPhase::kAdm);
  for (const auto& r : log.epochs) EXPECT_TRUE(std::isfinite(r.mean_loss) && r.mean_loss > 0);
  std::istringstream in(sink.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 4);
}

TEST(Trainer, LossDecreasesOnASmallSet) {
  const ModelConfig model = cftest::small_model();
  TrainConfig cfg = quick_config();
  cfg.epochs = 6;
  TrainLog log;
  train_bsm(tiny_dataset(8), cfg, model, &log);
  EXPECT_LT(log.epochs.back().mean_loss, log.epochs.front().mean_loss);
}

TEST(Trainer, DivergenceIsReported) {
  const ModelConfig model = cftest::small_model();
  TrainConfig cfg = quick_config();
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr_bsm = 1e30;
  try {
    train_bsm(tiny_dataset(), cfg, model);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}

TEST(Trainer, InvalidInputsRejected) {
  const ModelConfig model = cftest::small_model();
  TrainConfig cfg = quick_config();
  EXPECT_THROW(train_bsm({}, cfg, model), InvalidArgument);
  cfg.lr_bsm = 0;
  EXPECT_THROW(train_bsm(tiny_dataset(), cfg, model), InvalidArgument);
  cfg = quick_config();
  cfg.iterative_click_prob = 1.5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  ParamSet<Real> untagged = init_params<Real>(model);
  untagged.add("stray", {1}, Partition::kUnassigned);
  EXPECT_THROW(train_adm(tiny_dataset(), untagged, quick_config(), model), InvalidArgument);
}
