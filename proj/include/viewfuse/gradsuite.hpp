#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "viewfuse/gradcheck.hpp"
#include "viewfuse/model.hpp"
#include "viewfuse/scene.hpp"

namespace viewfuse {

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

struct GradSuiteEntry {
  std::string name;
  bool model_level = false;
  double tolerance = 0.0;
  GradCheckReport report;
};

// Finite-difference checks of every differentiable operation on seeded random
// instances, plus the end-to-end loss of small two-view models.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, bool include_model = true);

// Tiny two-camera scene and model used by the model-level checks.
struct TinySetup {
  SceneConfig scene;
  Dataset dataset;
  ModelConfig model;
};
TinySetup tiny_setup(std::uint64_t seed, FusionMode mode = FusionMode::kSupervisedWeighted,
                     WeightActivation act = WeightActivation::kRelu);

}  // namespace viewfuse
