#include "clickforge/evalbench.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace clickforge;

namespace {

/// Returns the ground truth after every click.
class OraclePredictor : public ClickPredictor {
 public:
  void begin(const LabeledImage& sample, std::size_t) override { gt_ = sample.mask; }
  Mask click(const Click&) override { return gt_; }
  void end() override {}

 private:
  Mask gt_;
};

/// Never predicts anything.
class EmptyPredictor : public ClickPredictor {
 public:
  void begin(const LabeledImage& sample, std::size_t) override { shape_ = {sample.mask.rows(), sample.mask.cols()}; }
  Mask click(const Click&) override { return Mask::Zero(shape_.first, shape_.second); }
  void end() override {}

 private:
  std::pair<Eigen::Index, Eigen::Index> shape_;
};

/// Paints a disk of radius 5 per positive click and clears one per negative:
/// a deterministic, imperfect but improving predictor.
class DiskPredictor : public ClickPredictor {
 public:
  void begin(const LabeledImage& sample, std::size_t) override {
    h_ = static_cast<int>(sample.mask.rows());
    w_ = static_cast<int>(sample.mask.cols());
    clicks_.clear();
  }
  Mask click(const Click& c) override {
    clicks_.push_back(c);
    const GuidanceMaps g = render_disks(clicks_, h_, w_);
    return ((g.positive != 0) && (g.negative == 0)).cast<std::uint8_t>();
  }
  void end() override {}

 private:
  int h_ = 0, w_ = 0;
  std::vector<Click> clicks_;
};

Dataset small_set(int n, std::uint64_t seed = 3) {
  DomainSpec spec;
  spec.height = spec.width = 32;
  spec.seed = seed;
  return generate_dataset(spec, n);
}

}  // namespace

TEST(Decay, ReferenceValues) {
  EXPECT_NEAR(decay(4.15, 4.42), 6.50, 0.01);
  EXPECT_NEAR(decay(5.32, 5.64), 6.02, 0.01);
  EXPECT_NEAR(decay(4.15, 4.56), 9.88, 0.01);
  EXPECT_NEAR(decay(5.32, 5.68), 6.77, 0.01);
}

TEST(Decay, Properties) {
  for (double a : {0.5, 1.0, 4.15, 20.0}) {
    EXPECT_EQ(decay(a, a), 0.0);
    EXPECT_DOUBLE_EQ(decay(a, a + 1.0), -decay(a, a - 1.0));
    EXPECT_GT(decay(a, a + 0.1), 0.0);
  }
  EXPECT_THROW(decay(0.0, 1.0), InvalidArgument);
  EXPECT_THROW(decay(-1.0, 1.0), InvalidArgument);
}

TEST(NoC, OracleNeedsOneClick) {
  OraclePredictor oracle;
  const NoCReport r = noc_eval(oracle, small_set(10), EvalConfig{});
  for (double m : r.mean_noc) EXPECT_EQ(m, 1.0);
  for (const auto& img : r.images) EXPECT_EQ(img.trajectory.size(), 1u);
}

TEST(NoC, NeverSucceedingHitsCap) {
  EmptyPredictor empty;
  EvalConfig cfg;
  cfg.cap = 20;
  const NoCReport r = noc_eval(empty, small_set(5), cfg);
  for (double m : r.mean_noc) EXPECT_EQ(m, 20.0);
  for (const auto& img : r.images) EXPECT_EQ(img.trajectory.size(), 20u);
}

TEST(NoC, TrajectoryLengthEqualsClicksUsed) {
  DiskPredictor disks;
  const NoCReport r = noc_eval(disks, small_set(12), EvalConfig{});
  for (const auto& img : r.images) {
    const int largest_target = img.clicks.back();
    ASSERT_GE(img.trajectory.size(), 1u);
    EXPECT_LE(img.trajectory.size(), 20u);
    for (int c : img.clicks) {
      EXPECT_GE(c, 1);
      EXPECT_LE(c, 20);
    }
    // Stopped at the largest target, or ran to the cap.
    EXPECT_EQ(static_cast<int>(img.trajectory.size()), largest_target);
  }
  for (double m : r.mean_noc) {
    EXPECT_GE(m, 1.0);
    EXPECT_LE(m, 20.0);
  }
  EXPECT_LE(r.mean_for(0.85), r.mean_for(0.90));
}

TEST(NoC, ClickCountsMatchTrajectoryOracle) {
  DiskPredictor disks;
  EvalConfig cfg;
  cfg.targets = {0.5, 0.85, 0.9};
  const NoCReport r = noc_eval(disks, small_set(8), cfg);
  for (const auto& img : r.images)
    for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
      int expected = cfg.cap;
      for (std::size_t k = 0; k < img.trajectory.size(); ++k)
        if (img.trajectory[k] >= cfg.targets[t]) {
          expected = static_cast<int>(k) + 1;
          break;
        }
      EXPECT_EQ(img.clicks[t], expected);
    }
}

TEST(NoC, ModeOffInvariantToDatasetOrder) {
  const ModelConfig model = cftest::small_model();
  const ParamSet<Real> params = init_params<Real>(model);
  AdaptConfig off;
  off.mode = AdaptMode::kOff;
  EvalConfig cfg;
  cfg.cap = 5;
  Dataset d = small_set(6);
  const NoCReport a = noc_eval(params, model, off, d, cfg);
  std::reverse(d.begin(), d.end());
  const NoCReport b = noc_eval(params, model, off, d, cfg);
  EXPECT_EQ(a.mean_noc, b.mean_noc);
}

TEST(NoC, EngineReportsAreDeterministic) {
  const ModelConfig model = cftest::small_model();
  const ParamSet<Real> params = init_params<Real>(model);
  AdaptConfig local;
  local.lr_adm = 1e-3;
  EvalConfig cfg;
  cfg.cap = 4;
  const Dataset d = small_set(4);
  ParamSet<Real> evolved_a, evolved_b;
  const auto a = to_json(noc_eval(params, model, local, d, cfg, &evolved_a)).dump();
  const auto b = to_json(noc_eval(params, model, local, d, cfg, &evolved_b)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(evolved_a, evolved_b);
  EXPECT_FALSE(evolved_a == params);
}

TEST(NoC, EmptyGroundTruthRejected) {
  Dataset d = small_set(2);
  d[1].mask.setZero();
  OraclePredictor oracle;
  EXPECT_THROW(noc_eval(oracle, d, EvalConfig{}), InvalidArgument);
  EXPECT_THROW(noc_eval(oracle, Dataset{}, EvalConfig{}), InvalidArgument);
}

TEST(NoC, ConfigValidation) {
  EvalConfig cfg;
  cfg.targets = {};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.targets = {1.2};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.targets = {0.9};
  cfg.cap = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(MiouCurve, OraclePadsWithPerfectScore) {
  OraclePredictor oracle;
  const auto curve = miou_curve(oracle, small_set(3), 5);
  ASSERT_EQ(curve.size(), 5u);
  for (double v : curve) EXPECT_EQ(v, 1.0);
}

TEST(MiouCurve, MatchesNoCTrajectories) {
  DiskPredictor a, b;
  const Dataset d = small_set(6);
  EvalConfig cfg;
  cfg.targets = {1.0};
  const NoCReport r = noc_eval(a, d, cfg);
  const auto curve = miou_curve(b, d, 20);
  for (std::size_t k = 0; k < 20; ++k) {
    double mean = 0;
    for (const auto& img : r.images) mean += img.trajectory[std::min(k, img.trajectory.size() - 1)];
    EXPECT_NEAR(curve[k], mean / d.size(), 1e-12) << "k=" << k + 1;
  }
  std::ostringstream csv;
  write_miou_csv(csv, curve);
  EXPECT_EQ(csv.str().rfind("k,miou\n1,", 0), 0u);
}

TEST(Reports, JsonShape) {
  OraclePredictor oracle;
  NoCReport r = noc_eval(oracle, small_set(2), EvalConfig{});
  r.mode = "off";
  const auto j = to_json(r);
  EXPECT_EQ(j["mean_noc"]["85"], 1.0);
  EXPECT_EQ(j["mean_noc"]["90"], 1.0);
  EXPECT_EQ(j["cap"], 20);
  EXPECT_EQ(target_label(0.85), "85");
  EXPECT_EQ(target_label(0.9), "90");
}

TEST(Forgetting, ProtocolShapesAndModeOffBaseline) {
  const ModelConfig model = cftest::small_model();
  const ParamSet<Real> params = init_params<Real>(model);
  AdaptConfig adapt;
  adapt.mode = AdaptMode::kGlobal;
  adapt.lr_adm = 1e-3;
  adapt.lr_bsm = 1e-5;
  EvalConfig cfg;
  cfg.cap = 3;
  DomainSpec changed;
  changed.kind = DomainKind::kChanged;
  changed.height = changed.width = 32;
  const Dataset adapt_set = generate_dataset(changed, 3);
  const Dataset eval_set = small_set(3);
  const DecayReport r = forgetting_protocol(params, model, adapt_set, eval_set, adapt, cfg);
  AdaptConfig off = adapt;
  off.mode = AdaptMode::kOff;
  EXPECT_EQ(r.baseline, noc_eval(params, model, off, eval_set, cfg).mean_noc);
  ASSERT_EQ(r.decay_off.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t) EXPECT_DOUBLE_EQ(r.decay_off[t], decay(r.baseline[t], r.post_off[t]));
  const auto j = to_json(r);
  EXPECT_TRUE(j.contains("decay_percent_off"));
  EXPECT_TRUE(j.contains("decay_percent_adaptive"));
}

TEST(Ablation, FourCellsFromTheSameStart) {
  const ModelConfig model = cftest::small_model();
  const ParamSet<Real> params = init_params<Real>(model);
  EvalConfig cfg;
  cfg.cap = 2;
  const auto grid = ablation_grid(params, model, small_set(2), AdaptConfig{}, cfg);
  ASSERT_EQ(grid.size(), 4u);
  std::set<std::pair<bool, bool>> cells;
  for (const auto& c : grid) cells.insert({c.adm, c.optim});
  EXPECT_EQ(cells.size(), 4u);
  const auto j = to_json(grid);
  ASSERT_EQ(j["cells"].size(), 4u);
  EXPECT_TRUE(j["cells"][0]["mean_noc"].contains("85"));
  EXPECT_TRUE(j["cells"][0]["mean_noc"].contains("90"));
}
