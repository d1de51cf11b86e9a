#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "viewfuse/params.hpp"

namespace viewfuse {

enum class OptimizerKind { kSgdMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Learning-rate decay points, counted in optimizer steps within a stage.
  std::vector<std::int64_t> milestones;
  double decay = 0.1;
  // Element-wise gradient clip; 0 disables.
  double grad_clip = 0.0;
  bool operator==(const OptimizerConfig&) const = default;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  // Updates every parameter named in grads. Parameters without a gradient
  // entry are left untouched (frozen).
  void step(ParamSet& params, const GradSet& grads);
  double learning_rate() const;
  std::int64_t step_count() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

}  // namespace viewfuse
