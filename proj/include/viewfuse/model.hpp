#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "viewfuse/geometry.hpp"
#include "viewfuse/ops.hpp"
#include "viewfuse/params.hpp"
#include "viewfuse/scene.hpp"

namespace viewfuse {

enum class FusionMode {
  // Weight subnet on supervised single-view predictions (full method).
  kSupervisedWeighted,
  // Same weight subnet, single-view predictions receive no loss.
  kUnsupervisedWeighted,
  // No weight subnet: W_i = M_i / (sum_j M_j + sigma).
  kMaskedAverage,
};

enum class WeightActivation { kRelu, kSoftplus };

struct ModelConfig {
  int image_channels = 1;
  // Feature extractor, 3x3 convs with relu after each.
  std::vector<int> extractor_channels{8, 16, 16};
  std::vector<int> extractor_strides{1, 2, 1};
  // Decoders and weight subnet end in a single output channel.
  std::vector<int> decoder_view_channels{16, 1};
  std::vector<int> decoder_scene_channels{16, 16, 1};
  std::vector<int> decoder_scene_dilations{1, 2, 1};
  std::vector<int> weight_subnet_channels{16, 16, 8, 1};
  double sigma = 1e-6;
  double lambda = 1.0;
  FusionMode fusion_mode = FusionMode::kSupervisedWeighted;
  WeightActivation weight_activation = WeightActivation::kRelu;
  // Bias of the last weight-subnet layer at initialisation.
  double weight_bias_init = 0.1;
  // Scale applied to the last weight-subnet layer's initial kernel.
  double weight_final_gain = 0.1;

  void validate() const;
  int feature_stride() const;
  int feature_channels() const { return extractor_channels.back(); }
  // Weight on the view loss actually used in training for this fusion mode
  // (0 unless the single-view path is supervised).
  double effective_lambda() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(WeightActivation a);
WeightActivation weight_activation_from_string(const std::string& s);

// Parameter name prefixes.
inline constexpr const char* kExtractorPrefix = "extractor.";
inline constexpr const char* kViewDecoderPrefix = "view_decoder.";
inline constexpr const char* kWeightNetPrefix = "weight_net.";
inline constexpr const char* kSceneDecoderPrefix = "scene_decoder.";

// Fan-in scaled uniform initialisation: U(-b, b), b = sqrt(6 / fan_in), biases
// zero, except the weight subnet's last layer (see ModelConfig).
ParamSet init_model_params(const ModelConfig& cfg, std::uint64_t seed);

// Adds one 3x3 conv layer "<prefix><index>.weight/.bias".
void add_conv_params(ParamSet& params, const std::string& prefix, int index,
                     int c_in, int c_out, int kernel, double gain, Rng& rng);

// Model-side geometry of one camera, precomputed once per dataset.
struct ViewGeometry {
  CameraModel camera;
  Tensor sample_grid;  // [H_cells, W_cells, 2]
  FovMask mask;        // eroded model-side field of view
  Tensor mask_tensor;  // [1, H_cells, W_cells]
};

struct SceneGeometry {
  GroundGrid grid;
  int feature_stride = 1;
  std::vector<ViewGeometry> views;

  static SceneGeometry build(const std::vector<CameraModel>& model_cameras,
                             const GroundGrid& grid, const ModelConfig& cfg);
};

struct ForwardOutput {
  std::vector<int> views;                // view index per entry, input order
  std::vector<Tensor> view_features;     // F_i, [C, H_cells, W_cells]
  std::vector<Tensor> view_preds;        // V_i, [1, H_cells, W_cells]
  std::vector<Tensor> weight_maps_raw;   // W_hat_i
  std::vector<Tensor> weight_maps;       // W_i
  Tensor fused;                          // F
  Tensor scene_pred;                     // V_s
};

Tensor run_conv_stack(const Tensor& x, const ParamLeaves& p,
                      const std::string& prefix,
                      const std::vector<int>& channels,
                      const std::vector<int>& strides,
                      const std::vector<int>& dilations, bool relu_last);

Tensor extract_features(const Tensor& image, const ParamLeaves& p,
                        const ModelConfig& cfg);
Tensor decode_view(const Tensor& projected, const ParamLeaves& p,
                   const ModelConfig& cfg);
// Raw weight map W_hat = C(V) with the configured nonnegative activation.
Tensor weight_subnet(const Tensor& view_pred, const ParamLeaves& p,
                     const ModelConfig& cfg);

struct WeightMaps {
  std::vector<Tensor> raw;
  std::vector<Tensor> normalized;
};

// W_i = (W_hat_i * M_i) / (sum_j W_hat_j * M_j + sigma). The sum runs in
// ascending order of order_key so that the result does not depend on the
// order of the input lists.
WeightMaps normalize_weights(std::span<const Tensor> raw,
                             std::span<const Tensor> masks, double sigma,
                             std::span<const int> order_key = {});
WeightMaps weight_maps(std::span<const Tensor> view_preds,
                       std::span<const Tensor> masks, const ParamLeaves& p,
                       const ModelConfig& cfg,
                       std::span<const int> order_key = {});
// Masked average weights, W_i = M_i / (sum_j M_j + sigma).
WeightMaps masked_average_weights(std::span<const Tensor> masks, double sigma,
                                  std::span<const int> order_key = {});

// F = sum_i F_i * tile(W_i), summed in ascending order_key.
Tensor fuse(std::span<const Tensor> features, std::span<const Tensor> weights,
            std::span<const int> order_key = {});

Tensor decode_scene(const Tensor& fused, const ParamLeaves& p,
                    const ModelConfig& cfg);

ForwardOutput forward(const MultiViewFrame& frame, std::span<const int> views,
                      const ParamLeaves& p, const ModelConfig& cfg,
                      const SceneGeometry& geometry);

// Mean over views of the per-view summed squared error.
Tensor loss_view(std::span<const Tensor> view_preds,
                 std::span<const Tensor> view_gts);
Tensor loss_scene(const Tensor& scene_pred, const Tensor& scene_gt);
Tensor loss_total(const Tensor& loss_s, const Tensor& loss_v, double lambda);

}  // namespace viewfuse
