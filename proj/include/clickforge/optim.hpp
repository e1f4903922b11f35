#pragma once

#include "clickforge/params.hpp"

#include <cmath>
#include <string>

namespace clickforge {

enum class OptimizerKind { kSgd, kAdam };

inline const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw InvalidArgument("unknown optimizer '" + text + "'");
}

/// Per-partition step sizes. A zero rate leaves that partition untouched
/// bit-for-bit.
struct LearningRates {
  double bsm = 0.0;
  double adm = 0.0;

  double for_partition(Partition p) const { return p == Partition::kBsm ? bsm : p == Partition::kAdm ? adm : 0.0; }
};

/// Plain gradient descent or Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8) over a ParamSet.
template <typename Scalar>
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::kAdam) : kind_(kind) {}

  OptimizerKind kind() const { return kind_; }
  long steps() const { return steps_; }

  void reset() {
    first_ = ParamSet<Scalar>();
    second_ = ParamSet<Scalar>();
    steps_ = 0;
  }

  void step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, const LearningRates& lr) {
    if (grads.names() != params.names()) throw InvalidArgument("gradient layout differs from parameters");
    ++steps_;
    if (kind_ == OptimizerKind::kAdam && first_.size() == 0) {
      first_ = params.zeros_like();
      second_ = params.zeros_like();
    }
    const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double rate = lr.for_partition(params.at(k).partition);
      if (rate == 0.0) continue;
      const auto& g = grads.at(k).values;
      auto& theta = params.mutable_at(k).values;
      if (kind_ == OptimizerKind::kSgd) {
        theta -= static_cast<Scalar>(rate) * g;
        continue;
      }
      auto& m = first_.mutable_at(k).values;
      auto& v = second_.mutable_at(k).values;
      m = Scalar(kBeta1) * m + Scalar(1.0 - kBeta1) * g;
      v = Scalar(kBeta2) * v + Scalar(1.0 - kBeta2) * g.cwiseAbs2();
      const auto step_size = static_cast<Scalar>(rate / bias1);
      const auto denom = ((v.array() / static_cast<Scalar>(bias2)).sqrt() + Scalar(kEps));
      theta.array() -= step_size * m.array() / denom;
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  ParamSet<Scalar> first_;
  ParamSet<Scalar> second_;
  long steps_ = 0;
};

}  // namespace clickforge
