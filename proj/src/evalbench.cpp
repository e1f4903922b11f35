#include "clickforge/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace clickforge {

EnginePredictor::EnginePredictor(ParamSet<Real> params, ModelConfig model, AdaptConfig cfg)
    : params_(std::move(params)), model_(std::move(model)), cfg_(std::move(cfg)) {
  cfg_.validate();
}

void EnginePredictor::begin(const LabeledImage& sample, std::size_t index) {
  session_ = begin_session(sample.image, params_, model_, cfg_, "image-" + std::to_string(index));
  session_->step_log = step_log_;
}

Mask EnginePredictor::click(const Click& click) {
  if (!session_) throw StateError("click outside a session");
  return binarize(process_click(*session_, click), Real(0.5));
}

void EnginePredictor::end() {
  if (!session_) throw StateError("end outside a session");
  if (!session_->clicks.empty()) {
    SessionResult result = end_session(std::move(*session_));
    if (cfg_.mode != AdaptMode::kOff) params_ = std::move(result.params);
  }
  session_.reset();
}

void EvalConfig::validate() const {
  if (targets.empty()) throw InvalidArgument("at least one target IoU is required");
  for (double t : targets)
    if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("target IoU must lie in (0, 1]");
  if (cap < 1) throw InvalidArgument("click cap must be >= 1");
}

double NoCReport::mean_for(double target) const {
  for (std::size_t t = 0; t < targets.size(); ++t)
    if (std::abs(targets[t] - target) < 1e-12) return mean_noc[t];
  throw InvalidArgument("report has no target " + std::to_string(target));
}

namespace {

void require_nonempty(const Dataset& dataset) {
  if (dataset.empty()) throw InvalidArgument("evaluation dataset is empty");
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if ((dataset[i].mask != 0).count() == 0)
      throw InvalidArgument("image " + std::to_string(i) + " has an empty ground-truth mask");
}

}  // namespace

NoCReport noc_eval(ClickPredictor& predictor, const Dataset& dataset, const EvalConfig& cfg) {
  cfg.validate();
  require_nonempty(dataset);
  NoCReport report;
  report.targets = cfg.targets;
  report.cap = cfg.cap;
  report.seed = cfg.seed;
  const double stop_at = *std::max_element(cfg.targets.begin(), cfg.targets.end());
  report.mean_noc.assign(cfg.targets.size(), 0.0);

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const LabeledImage& sample = dataset[i];
    ImageNoC row;
    row.index = i;
    predictor.begin(sample, i);
    Mask pred = Mask::Zero(sample.mask.rows(), sample.mask.cols());
    for (int k = 1; k <= cfg.cap; ++k) {
      pred = predictor.click(next_robot_click(pred, sample.mask, k));
      row.trajectory.push_back(iou(pred, sample.mask));
      if (row.trajectory.back() >= stop_at) break;
    }
    predictor.end();
    for (double t : cfg.targets) {
      const auto hit = std::find_if(row.trajectory.begin(), row.trajectory.end(), [&](double v) { return v >= t; });
      row.clicks.push_back(hit == row.trajectory.end() ? cfg.cap
                                                       : static_cast<int>(hit - row.trajectory.begin()) + 1);
    }
    for (std::size_t t = 0; t < cfg.targets.size(); ++t) report.mean_noc[t] += row.clicks[t];
    report.images.push_back(std::move(row));
  }
  for (double& m : report.mean_noc) m /= static_cast<double>(dataset.size());
  return report;
}

NoCReport noc_eval(const ParamSet<Real>& params, const ModelConfig& model, const AdaptConfig& adapt,
                   const Dataset& dataset, const EvalConfig& cfg, ParamSet<Real>* evolved) {
  EnginePredictor engine(params, model, adapt);
  NoCReport report = noc_eval(engine, dataset, cfg);
  report.mode = to_string(adapt.mode);
  if (adapt.bypass_adm) report.mode += "+bypass-adm";
  if (evolved) *evolved = engine.params();
  return report;
}

std::vector<double> miou_curve(ClickPredictor& predictor, const Dataset& dataset, int k_max) {
  if (k_max < 1) throw InvalidArgument("k_max must be >= 1");
  require_nonempty(dataset);
  std::vector<double> curve(static_cast<std::size_t>(k_max), 0.0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const LabeledImage& sample = dataset[i];
    predictor.begin(sample, i);
    Mask pred = Mask::Zero(sample.mask.rows(), sample.mask.cols());
    double last = 0.0;
    for (int k = 1; k <= k_max; ++k) {
      if (k == 1 || !(pred == sample.mask).all()) {
        pred = predictor.click(next_robot_click(pred, sample.mask, k));
        last = iou(pred, sample.mask);
      }
      curve[static_cast<std::size_t>(k - 1)] += last;
    }
    predictor.end();
  }
  for (double& v : curve) v /= static_cast<double>(dataset.size());
  return curve;
}

double decay(double base_noc, double post_noc) {
  if (!(base_noc > 0.0)) throw InvalidArgument("decay needs a positive baseline NoC");
  return 100.0 * (post_noc - base_noc) / base_noc;
}

DecayReport forgetting_protocol(const ParamSet<Real>& params, const ModelConfig& model, const Dataset& adapt_set,
                                const Dataset& eval_set, const AdaptConfig& adapt, const EvalConfig& cfg) {
  AdaptConfig off = adapt;
  off.mode = AdaptMode::kOff;
  DecayReport out;
  out.targets = cfg.targets;
  out.baseline = noc_eval(params, model, off, eval_set, cfg).mean_noc;
  ParamSet<Real> evolved;
  out.adapt_noc = noc_eval(params, model, adapt, adapt_set, cfg, &evolved).mean_noc;
  out.post_off = noc_eval(evolved, model, off, eval_set, cfg).mean_noc;
  out.post_adaptive = noc_eval(evolved, model, adapt, eval_set, cfg).mean_noc;
  for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
    out.decay_off.push_back(decay(out.baseline[t], out.post_off[t]));
    out.decay_adaptive.push_back(decay(out.baseline[t], out.post_adaptive[t]));
  }
  return out;
}

std::vector<AblationCell> ablation_grid(const ParamSet<Real>& params, const ModelConfig& model,
                                        const Dataset& dataset, const AdaptConfig& adapt, const EvalConfig& cfg) {
  std::vector<AblationCell> grid;
  for (bool adm : {true, false}) {
    for (bool optim : {true, false}) {
      AdaptConfig c = adapt;
      c.bypass_adm = !adm;
      if (!optim) c.mode = AdaptMode::kOff;
      else if (c.mode == AdaptMode::kOff) c.mode = AdaptMode::kLocal;
      grid.push_back({adm, optim, noc_eval(params, model, c, dataset, cfg)});
    }
  }
  return grid;
}

std::string target_label(double target) {
  std::ostringstream s;
  s << std::round(target * 10000.0) / 100.0;
  return s.str();
}

nlohmann::json to_json(const NoCReport& report) {
  using nlohmann::json;
  json images = json::array();
  for (const auto& row : report.images) {
    json clicks = json::object();
    for (std::size_t t = 0; t < report.targets.size(); ++t) clicks[target_label(report.targets[t])] = row.clicks[t];
    images.push_back({{"index", row.index}, {"clicks", clicks}, {"trajectory", row.trajectory}});
  }
  json mean = json::object();
  for (std::size_t t = 0; t < report.targets.size(); ++t) mean[target_label(report.targets[t])] = report.mean_noc[t];
  return {{"targets", report.targets}, {"cap", report.cap},     {"seed", report.seed},
          {"mode", report.mode},       {"mean_noc", mean},      {"images", images}};
}

nlohmann::json to_json(const DecayReport& report) {
  using nlohmann::json;
  auto by_target = [&](const std::vector<double>& values) {
    json o = json::object();
    for (std::size_t t = 0; t < report.targets.size(); ++t) o[target_label(report.targets[t])] = values[t];
    return o;
  };
  return {{"targets", report.targets},
          {"baseline_noc", by_target(report.baseline)},
          {"adapt_noc", by_target(report.adapt_noc)},
          {"post_noc_off", by_target(report.post_off)},
          {"post_noc_adaptive", by_target(report.post_adaptive)},
          {"decay_percent_off", by_target(report.decay_off)},
          {"decay_percent_adaptive", by_target(report.decay_adaptive)}};
}

nlohmann::json to_json(const std::vector<AblationCell>& grid) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : grid) {
    nlohmann::json mean = nlohmann::json::object();
    for (std::size_t t = 0; t < cell.report.targets.size(); ++t)
      mean[target_label(cell.report.targets[t])] = cell.report.mean_noc[t];
    cells.push_back({{"adm", cell.adm}, {"optim", cell.optim}, {"mean_noc", mean}});
  }
  return {{"cells", cells}};
}

void write_miou_csv(std::ostream& out, const std::vector<double>& curve) {
  out << "k,miou\n";
  for (std::size_t k = 0; k < curve.size(); ++k) out << k + 1 << ',' << curve[k] << '\n';
}

}  // namespace clickforge
