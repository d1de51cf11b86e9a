#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "viewfuse/eval.hpp"
#include "viewfuse/model.hpp"
#include "viewfuse/optim.hpp"
#include "viewfuse/params.hpp"
#include "viewfuse/scene.hpp"

namespace viewfuse {

struct TrainConfig {
  // Stages to run, in order: 1 counting pretrain, 2 single-view, 3 joint.
  std::vector<int> stages{1, 2, 3};
  int epochs_stage1 = 1;
  int epochs_stage2 = 1;
  int epochs_stage3 = 5;
  OptimizerConfig optimizer;
  // Fractions of each stage's step count at which the learning rate decays.
  std::vector<double> lr_decay_at{0.6, 0.85};
  // 0 means every available view.
  int views_per_sample = 0;
  int resamples_per_frame = 1;
  // Frames whose gradients are averaged into one optimizer step.
  int batch_size = 1;
  // Validation every eval_every stage-3 epochs (and after the last one);
  // 0 disables validation and keeps the final parameters.
  int eval_every = 1;
  int eval_resamples = 1;
  std::uint64_t seed = 1;
  // Loss values above this (or non-finite) abort training.
  double divergence_limit = 1e8;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdaptConfig {
  double target_label_fraction = 0.05;
  std::vector<int> discriminator_channels{16};
  double adversarial_loss_weight = 0.1;
  int epochs = 2;
  OptimizerConfig discriminator_optimizer = adam_default();

  static OptimizerConfig adam_default() {
    OptimizerConfig o;
    o.kind = OptimizerKind::kAdam;
    o.learning_rate = 1e-3;
    return o;
  }
  // Classify fused features (true) or the mean of per-view features (false).
  bool discriminator_on_fused = true;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const AdaptConfig&) const = default;
};

struct LossRecord {
  int stage = 0;  // 1, 2, 3; 4 = adaptation
  std::int64_t step = 0;
  double loss_view = 0.0;
  double loss_scene = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
};

struct ValidationRecord {
  int stage = 0;
  int epoch = 0;
  MetricReport report;
};

// Uniform subset of k of n views without replacement, sorted ascending.
// k == 0 or k == n returns every view.
std::vector<int> select_views(int n_views, int k, Rng& rng);

// Train/validation split of a dataset's frame indices.
struct DataSplit {
  std::vector<int> train;
  std::vector<int> val;
};
DataSplit split_frames(int n_frames, int n_val);

// Shared state of one training run over a dataset.
class Trainer {
 public:
  Trainer(const Dataset& ds, DataSplit split, ModelConfig mcfg, TrainConfig tcfg,
          EvalSettings eval = {}, int workers = 1);

  const SceneGeometry& geometry() const { return geometry_; }
  const std::vector<LossRecord>& log() const { return log_; }
  const std::vector<ValidationRecord>& validations() const { return validations_; }
  double best_val_f1() const { return best_f1_; }
  std::optional<int> best_epoch() const { return best_epoch_; }

  ParamSet stage1_pretrain(ParamSet params);
  ParamSet stage2_train_single_view(ParamSet params);
  // Returns the parameters with the best validation F1 when validation is
  // enabled, else the final parameters.
  ParamSet stage3_train_joint(ParamSet params);
  // Runs cfg.stages in order (stage 2 is skipped when the fusion mode puts
  // no loss on single-view predictions).
  ParamSet train(ParamSet params);

  // Stage-1 counting head prediction summed over the image, and the target
  // density summed the same way, for one frame/view.
  std::pair<double, double> counting_mass(const ParamSet& params,
                                          const ParamSet& head, int frame,
                                          int view) const;
  const ParamSet& counting_head() const { return head_; }

 private:
  struct StepLoss {
    double view = 0.0;
    double scene = 0.0;
    double total = 0.0;
  };
  using SampleFn = std::function<StepLoss(const ParamSet&, int frame,
                                          const std::vector<int>& views, GradSet&)>;
  void run_stage(int stage, int epochs, ParamSet& params, const SampleFn& fn,
                 const std::function<void(int epoch, const ParamSet&)>& after_epoch);
  void check_finite(int stage, std::int64_t step, const StepLoss& l) const;
  const Array2& density(int frame, int view) const;

  const Dataset& ds_;
  DataSplit split_;
  ModelConfig mcfg_;
  TrainConfig tcfg_;
  EvalSettings eval_;
  int workers_;
  SceneGeometry geometry_;
  ParamSet head_;
  std::vector<std::vector<Array2>> density_;  // lazily filled stage-1 targets
  std::vector<LossRecord> log_;
  std::vector<ValidationRecord> validations_;
  double best_f1_ = -1.0;
  std::optional<int> best_epoch_;
};

// Evaluation of a model on a set of frames. With views_per_sample k > 0,
// each frame is evaluated on `resamples` seeded random k-view subsets, and
// ground truth is limited to people inside the union of those views' fields
// of view. All per-subset results are pooled.
struct EvalResult {
  std::vector<FrameResult> frames;
  MetricReport total;
};
EvalResult evaluate_model(const Dataset& ds, const std::vector<int>& frames,
                          const ParamSet& params, const ModelConfig& mcfg,
                          const SceneGeometry& geometry, const EvalSettings& settings,
                          int views_per_sample, int resamples, std::uint64_t seed,
                          int workers = 1);

// Occupancy map prediction for one frame and view subset.
Array2 predict_scene(const MultiViewFrame& frame, const std::vector<int>& views,
                     const ParamSet& params, const ModelConfig& mcfg,
                     const SceneGeometry& geometry);

struct AdaptResult {
  ParamSet params;
  ParamSet discriminator;
  std::vector<LossRecord> log;
  // Discriminator accuracy over each epoch's discriminator updates.
  std::vector<double> disc_accuracy;
};

// Fine-tunes params on source frames plus the labeled target frames while a
// discriminator learns to tell source from target features; the model
// receives the discriminator's loss on target features through a gradient
// reversal, so it is pushed to make the domains indistinguishable. Unlabeled
// target frames only enter the adversarial term. With adversarial weight 0
// this is plain joint fine-tuning.
AdaptResult adapt(const Dataset& source, const std::vector<int>& source_frames,
                  const Dataset& target, const std::vector<int>& target_labeled,
                  const std::vector<int>& target_unlabeled, ParamSet params,
                  const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const AdaptConfig& acfg);

// First round(fraction * n) (at least 1) of the given frames are labeled.
std::pair<std::vector<int>, std::vector<int>> split_labeled(
    const std::vector<int>& frames, double fraction);

ParamSet init_discriminator(const AdaptConfig& acfg, int feature_channels,
                            std::uint64_t seed);
// Logit of the source class for a [C,H,W] feature map.
Tensor discriminator_logit(const Tensor& features, const ParamLeaves& p,
                           const AdaptConfig& acfg);

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<LossRecord>& log, const std::string& config_hash);

}  // namespace viewfuse
