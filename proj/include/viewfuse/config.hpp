#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewfuse/eval.hpp"
#include "viewfuse/model.hpp"
#include "viewfuse/params.hpp"
#include "viewfuse/scene.hpp"
#include "viewfuse/training.hpp"

namespace viewfuse {

struct DatasetConfig {
  int train_frames = 200;
  int val_frames = 50;
  // External dataset directory; empty means simulate from the scene.
  std::string path;
  int total() const { return train_frames + val_frames; }
  bool operator==(const DatasetConfig&) const = default;
};

struct EvalConfig {
  EvalSettings settings;
  // Named distance threshold; when set, t_cells is derived from it.
  std::string preset;
  std::vector<int> view_counts;
  int resamples = 1;
  bool operator==(const EvalConfig& o) const {
    return settings.threshold == o.settings.threshold &&
           settings.nms_radius_cells == o.settings.nms_radius_cells &&
           settings.t_cells == o.settings.t_cells && preset == o.preset &&
           view_counts == o.view_counts && resamples == o.resamples;
  }
};

struct AdaptExperiment {
  AdaptConfig adapt;
  // Target scene, simulated unless a target dataset directory is given.
  SceneConfig target_scene;
  int target_train_frames = 40;
  int target_test_frames = 20;
  std::string target_path;
  bool operator==(const AdaptExperiment&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  SceneConfig scene;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  std::optional<AdaptExperiment> adapt;
  EvalConfig eval;

  // Seeds of every stochastic component follow from `seed`.
  void set_seed(std::uint64_t s);
  std::uint64_t dataset_seed() const { return seed; }
  std::uint64_t init_seed() const;
  std::uint64_t target_dataset_seed() const;
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// JSON with // and /* */ comments. Unknown keys are errors.
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);
// Canonical text form: parse_experiment(serialize(c)) == c.
std::string serialize(const ExperimentConfig& cfg);

nlohmann::json to_json(const SceneConfig& s);
SceneConfig scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_from_json(const nlohmann::json& j);

// FNV-1a 64 of the text, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);
// Hash of the canonical form without output_dir.
std::string config_hash(const ExperimentConfig& cfg);
std::string model_hash(const ModelConfig& m);

// Cameras on a circle around a ground point, all looking at it.
std::vector<CameraModel> camera_ring(int count, Point2 center_m, double radius_m,
                                     double height_m, double focal_px, double phase_deg,
                                     int image_width, int image_height);

// Model checkpoint: the parameter archive plus the model configuration. The
// loader refuses a checkpoint whose model configuration hash differs.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const ModelConfig& model, const std::string& experiment_hash);
ParamSet load_checkpoint(const std::filesystem::path& path, const ModelConfig& model);

}  // namespace viewfuse
