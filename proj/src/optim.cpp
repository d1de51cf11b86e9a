#include "viewfuse/optim.hpp"

#include <algorithm>
#include <cmath>

#include "viewfuse/error.hpp"

namespace viewfuse {

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {
  if (!(cfg_.learning_rate >= 0.0)) {
    throw ConfigError("optimizer learning_rate must be >= 0");
  }
}

double Optimizer::learning_rate() const {
  double lr = cfg_.learning_rate;
  for (auto m : cfg_.milestones)
    if (steps_ >= m) lr *= cfg_.decay;
  return lr;
}

void Optimizer::step(ParamSet& params, const GradSet& grads) {
  const double lr = learning_rate();
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name).values;
    if (g.size() != p.size()) {
      throw ShapeError("gradient for '" + name + "' has " +
                       std::to_string(g.size()) + " values, parameter has " +
                       std::to_string(p.size()));
    }
    auto& m = m_[name];
    if (m.empty()) m.assign(p.size(), 0.0);
    const double clip = cfg_.grad_clip;
    auto clipped = [clip](double x) {
      return clip > 0 ? std::clamp(x, -clip, clip) : x;
    };
    if (cfg_.kind == OptimizerKind::kSgdMomentum) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.momentum * m[i] + clipped(g[i]);
        p[i] -= lr * m[i];
      }
    } else {
      auto& v = v_[name];
      if (v.empty()) v.assign(p.size(), 0.0);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = clipped(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }
}

}  // namespace viewfuse
