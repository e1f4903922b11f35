#pragma once

#include "clickforge/adapter.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace clickforge {

/// Anything that turns a sequence of clicks on one image into masks. One
/// `begin` / `click`* / `end` cycle per image, images in dataset order.
class ClickPredictor {
 public:
  virtual ~ClickPredictor() = default;
  /// `sample` carries the ground truth so test doubles can use it; real
  /// models must only look at the image.
  virtual void begin(const LabeledImage& sample, std::size_t index) = 0;
  virtual Mask click(const Click& click) = 0;
  virtual void end() = 0;
};

/// The engine: each image is one adapter session, and the parameters left by
/// one session are the starting point of the next.
class EnginePredictor : public ClickPredictor {
 public:
  EnginePredictor(ParamSet<Real> params, ModelConfig model, AdaptConfig cfg);

  void begin(const LabeledImage& sample, std::size_t index) override;
  Mask click(const Click& click) override;
  void end() override;

  const ParamSet<Real>& params() const { return params_; }
  void set_step_log(std::ostream* log) { step_log_ = log; }

 private:
  ParamSet<Real> params_;
  ModelConfig model_;
  AdaptConfig cfg_;
  std::optional<Session> session_;
  std::ostream* step_log_ = nullptr;
};

struct EvalConfig {
  std::vector<double> targets{0.85, 0.90};
  int cap = 20;
  /// Recorded in reports. The protocol itself draws no random numbers.
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImageNoC {
  std::size_t index = 0;
  /// clicks[t] for targets[t]; cap when the target was never reached.
  std::vector<int> clicks;
  /// IoU after each click; its length is the number of clicks used.
  std::vector<double> trajectory;
};

struct NoCReport {
  std::vector<double> targets;
  int cap = 20;
  std::uint64_t seed = 0;
  std::string mode;
  std::vector<ImageNoC> images;
  std::vector<double> mean_noc;

  double mean_for(double target) const;
};

/// Per image: robot clicks until IoU reaches the largest target or `cap`.
NoCReport noc_eval(ClickPredictor& predictor, const Dataset& dataset, const EvalConfig& cfg);
NoCReport noc_eval(const ParamSet<Real>& params, const ModelConfig& model, const AdaptConfig& adapt,
                   const Dataset& dataset, const EvalConfig& cfg, ParamSet<Real>* evolved = nullptr);

/// Entry k−1 is the mean IoU after exactly k robot clicks. An image whose
/// prediction already equals the ground truth keeps its IoU for the
/// remaining clicks.
std::vector<double> miou_curve(ClickPredictor& predictor, const Dataset& dataset, int k_max = 20);

/// 100·(post − base)/base. Throws InvalidArgument when base ≤ 0.
double decay(double base_noc, double post_noc);

struct DecayReport {
  std::vector<double> targets;
  std::vector<double> baseline;       // step A, pristine parameters, mode off
  std::vector<double> post_off;       // step C, evolved parameters, mode off
  std::vector<double> post_adaptive;  // step C, evolved parameters, adaptation on
  std::vector<double> decay_off;
  std::vector<double> decay_adaptive;
  std::vector<double> adapt_noc;  // step B
};

/// A: baseline on eval_set. B: adapt over adapt_set (robot clicks to the
/// largest target or cap). C: eval_set again from the evolved parameters,
/// with adaptation off and on.
DecayReport forgetting_protocol(const ParamSet<Real>& params, const ModelConfig& model, const Dataset& adapt_set,
                                const Dataset& eval_set, const AdaptConfig& adapt, const EvalConfig& cfg);

struct AblationCell {
  bool adm = true;
  bool optim = true;
  NoCReport report;
};

/// {ADM on, off} × {Optim on, off}, each from the same starting parameters.
/// ADM off bypasses the ADM head; Optim off sets the mode to off.
std::vector<AblationCell> ablation_grid(const ParamSet<Real>& params, const ModelConfig& model,
                                        const Dataset& dataset, const AdaptConfig& adapt, const EvalConfig& cfg);

nlohmann::json to_json(const NoCReport& report);
nlohmann::json to_json(const DecayReport& report);
nlohmann::json to_json(const std::vector<AblationCell>& grid);
/// "k,miou" header then one row per click count.
void write_miou_csv(std::ostream& out, const std::vector<double>& curve);

/// Label used in reports for a target IoU, e.g. 0.85 -> "85".
std::string target_label(double target);

}  // namespace clickforge
