#include "viewfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "viewfuse/error.hpp"

namespace viewfuse {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model: " + msg);
  };
  require(image_channels >= 1, "image_channels must be >= 1");
  require(!extractor_channels.empty(), "extractor_channels is empty");
  require(extractor_strides.size() == extractor_channels.size(),
          "extractor_strides must match extractor_channels");
  for (int s : extractor_strides) require(s >= 1, "extractor strides must be >= 1");
  for (const auto* list : {&extractor_channels, &decoder_view_channels,
                           &decoder_scene_channels, &weight_subnet_channels}) {
    require(!list->empty(), "empty channel list");
    for (int c : *list) require(c >= 1, "channel counts must be >= 1");
  }
  require(decoder_view_channels.back() == 1, "decoder_view_channels must end in 1");
  require(decoder_scene_channels.back() == 1, "decoder_scene_channels must end in 1");
  require(weight_subnet_channels.back() == 1, "weight_subnet_channels must end in 1");
  require(decoder_scene_dilations.empty() ||
              decoder_scene_dilations.size() == decoder_scene_channels.size(),
          "decoder_scene_dilations must match decoder_scene_channels");
  for (int d : decoder_scene_dilations) require(d >= 1, "dilations must be >= 1");
  require(sigma > 0.0, "sigma must be > 0");
  require(lambda >= 0.0, "lambda must be >= 0");
}

int ModelConfig::feature_stride() const {
  int s = 1;
  for (int x : extractor_strides) s *= x;
  return s;
}

double ModelConfig::effective_lambda() const {
  return fusion_mode == FusionMode::kSupervisedWeighted ? lambda : 0.0;
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kSupervisedWeighted: return "supervised-weighted";
    case FusionMode::kUnsupervisedWeighted: return "unsupervised-weighted";
    case FusionMode::kMaskedAverage: return "masked-average";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "supervised-weighted") return FusionMode::kSupervisedWeighted;
  if (s == "unsupervised-weighted") return FusionMode::kUnsupervisedWeighted;
  if (s == "masked-average") return FusionMode::kMaskedAverage;
  throw ConfigError("model: unknown fusion_mode '" + s + "'");
}

std::string to_string(WeightActivation a) {
  return a == WeightActivation::kRelu ? "relu" : "softplus";
}

WeightActivation weight_activation_from_string(const std::string& s) {
  if (s == "relu") return WeightActivation::kRelu;
  if (s == "softplus") return WeightActivation::kSoftplus;
  throw ConfigError("model: unknown weight_activation '" + s + "'");
}

void add_conv_params(ParamSet& params, const std::string& prefix, int index,
                     int c_in, int c_out, int kernel, double gain, Rng& rng) {
  const int fan_in = c_in * kernel * kernel;
  const double bound = gain * std::sqrt(6.0 / fan_in);
  std::vector<double> w(static_cast<std::size_t>(c_out) * fan_in);
  for (auto& v : w) v = uniform(rng, -bound, bound);
  const std::string base = prefix + std::to_string(index);
  params.add(base + ".weight", {c_out, c_in, kernel, kernel}, std::move(w));
  params.add(base + ".bias", {c_out}, std::vector<double>(c_out, 0.0));
}

namespace {

void add_stack(ParamSet& params, const std::string& prefix, int c_in,
               const std::vector<int>& channels, Rng& rng) {
  for (std::size_t i = 0; i < channels.size(); ++i) {
    add_conv_params(params, prefix, static_cast<int>(i), c_in, channels[i], 3, 1.0,
                    rng);
    c_in = channels[i];
  }
}

}  // namespace

ParamSet init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p;
  add_stack(p, kExtractorPrefix, cfg.image_channels, cfg.extractor_channels, rng);
  add_stack(p, kViewDecoderPrefix, cfg.feature_channels(), cfg.decoder_view_channels,
            rng);
  add_stack(p, kWeightNetPrefix, 1, cfg.weight_subnet_channels, rng);
  add_stack(p, kSceneDecoderPrefix, cfg.feature_channels(),
            cfg.decoder_scene_channels, rng);
  const std::string last =
      kWeightNetPrefix + std::to_string(cfg.weight_subnet_channels.size() - 1);
  for (auto& v : p.at(last + ".weight").values) v *= cfg.weight_final_gain;
  p.at(last + ".bias").values.assign(1, cfg.weight_bias_init);
  return p;
}

SceneGeometry SceneGeometry::build(const std::vector<CameraModel>& model_cameras,
                                   const GroundGrid& grid, const ModelConfig& cfg) {
  SceneGeometry g;
  g.grid = grid;
  g.feature_stride = cfg.feature_stride();
  for (const auto& cam : model_cameras) {
    ViewGeometry v;
    v.camera = cam;
    v.sample_grid = projection_grid(cam, grid, strided_size(cam.image_height, g.feature_stride),
                                    strided_size(cam.image_width, g.feature_stride),
                                    g.feature_stride);
    v.mask = fov_mask(cam, grid).eroded();
    v.mask_tensor = v.mask.as_tensor();
    g.views.push_back(std::move(v));
  }
  return g;
}

Tensor run_conv_stack(const Tensor& x, const ParamLeaves& p,
                      const std::string& prefix, const std::vector<int>& channels,
                      const std::vector<int>& strides,
                      const std::vector<int>& dilations, bool relu_last) {
  Tensor h = x;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string base = prefix + std::to_string(i);
    ConvOptions o;
    o.stride = strides.empty() ? 1 : strides[i];
    o.dilation = dilations.empty() ? 1 : dilations[i];
    o.padding = o.dilation;  // 3x3 kernels keep size at stride 1
    h = conv2d(h, p[base + ".weight"], p[base + ".bias"], o);
    if (i + 1 < channels.size() || relu_last) h = relu(h);
  }
  return h;
}

Tensor extract_features(const Tensor& image, const ParamLeaves& p,
                        const ModelConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_channels) {
    throw ShapeError("extract_features: image must be [" +
                     std::to_string(cfg.image_channels) + ",H,W], got " +
                     shape_str(image.shape()));
  }
  return run_conv_stack(image, p, kExtractorPrefix, cfg.extractor_channels,
                        cfg.extractor_strides, {}, true);
}

Tensor decode_view(const Tensor& projected, const ParamLeaves& p,
                   const ModelConfig& cfg) {
  if (projected.rank() != 3 || projected.dim(0) != cfg.feature_channels()) {
    throw ShapeError("decode_view: expected " + std::to_string(cfg.feature_channels()) +
                     " channels (dim 0), got " + shape_str(projected.shape()));
  }
  return run_conv_stack(projected, p, kViewDecoderPrefix, cfg.decoder_view_channels,
                        {}, {}, true);
}

Tensor weight_subnet(const Tensor& view_pred, const ParamLeaves& p,
                     const ModelConfig& cfg) {
  Tensor h = run_conv_stack(view_pred, p, kWeightNetPrefix,
                            cfg.weight_subnet_channels, {}, {}, false);
  return cfg.weight_activation == WeightActivation::kRelu ? relu(h) : softplus(h);
}

namespace {

std::vector<std::size_t> reduction_order(std::size_t n,
                                         std::span<const int> order_key) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (!order_key.empty()) {
    if (order_key.size() != n) throw ShapeError("order_key length mismatch");
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return order_key[a] < order_key[b];
    });
  }
  return idx;
}

}  // namespace

WeightMaps normalize_weights(std::span<const Tensor> raw,
                             std::span<const Tensor> masks, double sigma,
                             std::span<const int> order_key) {
  if (raw.empty()) throw ShapeError("weight_maps: no views");
  if (raw.size() != masks.size()) {
    throw ShapeError("weight_maps: " + std::to_string(raw.size()) + " maps vs " +
                     std::to_string(masks.size()) + " masks");
  }
  WeightMaps out;
  out.raw.assign(raw.begin(), raw.end());
  std::vector<Tensor> masked;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    masked.push_back(elementwise_mul(raw[i], masks[i]));
  }
  std::vector<Tensor> ordered;
  for (auto i : reduction_order(raw.size(), order_key)) ordered.push_back(masked[i]);
  const Tensor denom = add_scalar(sum_over_views(ordered), sigma);
  for (const auto& m : masked) out.normalized.push_back(elementwise_div(m, denom));
  return out;
}

WeightMaps weight_maps(std::span<const Tensor> view_preds,
                       std::span<const Tensor> masks, const ParamLeaves& p,
                       const ModelConfig& cfg, std::span<const int> order_key) {
  std::vector<Tensor> raw;
  for (const auto& v : view_preds) raw.push_back(weight_subnet(v, p, cfg));
  return normalize_weights(raw, masks, cfg.sigma, order_key);
}

WeightMaps masked_average_weights(std::span<const Tensor> masks, double sigma,
                                  std::span<const int> order_key) {
  return normalize_weights(masks, masks, sigma, order_key);
}

Tensor fuse(std::span<const Tensor> features, std::span<const Tensor> weights,
            std::span<const int> order_key) {
  if (features.empty()) throw ShapeError("fuse: no views");
  if (features.size() != weights.size()) {
    throw ShapeError("fuse: " + std::to_string(features.size()) + " features vs " +
                     std::to_string(weights.size()) + " weight maps");
  }
  std::vector<Tensor> terms;
  for (auto i : reduction_order(features.size(), order_key)) {
    const int channels = features[i].dim(0);
    terms.push_back(elementwise_mul(features[i], tile_channels(weights[i], channels)));
  }
  return sum_over_views(terms);
}

Tensor decode_scene(const Tensor& fused, const ParamLeaves& p,
                    const ModelConfig& cfg) {
  if (fused.rank() != 3 || fused.dim(0) != cfg.feature_channels()) {
    throw ShapeError("decode_scene: expected " + std::to_string(cfg.feature_channels()) +
                     " channels (dim 0), got " + shape_str(fused.shape()));
  }
  return run_conv_stack(fused, p, kSceneDecoderPrefix, cfg.decoder_scene_channels, {},
                        cfg.decoder_scene_dilations, false);
}

ForwardOutput forward(const MultiViewFrame& frame, std::span<const int> views,
                      const ParamLeaves& p, const ModelConfig& cfg,
                      const SceneGeometry& geometry) {
  if (views.empty()) throw ConfigError("forward: empty view subset");
  ForwardOutput out;
  std::vector<Tensor> masks;
  for (int v : views) {
    if (v < 0 || v >= static_cast<int>(geometry.views.size()) ||
        v >= static_cast<int>(frame.images.size())) {
      throw ConfigError("forward: view index " + std::to_string(v) + " out of range");
    }
    const ViewGeometry& vg = geometry.views[static_cast<std::size_t>(v)];
    const Tensor feat = extract_features(frame.images[static_cast<std::size_t>(v)].as_tensor(),
                                         p, cfg);
    const Tensor projected = bilinear_sample(feat, vg.sample_grid);
    out.views.push_back(v);
    out.view_features.push_back(projected);
    out.view_preds.push_back(decode_view(projected, p, cfg));
    masks.push_back(vg.mask_tensor);
  }
  WeightMaps w = cfg.fusion_mode == FusionMode::kMaskedAverage
                     ? masked_average_weights(masks, cfg.sigma, views)
                     : weight_maps(out.view_preds, masks, p, cfg, views);
  out.weight_maps_raw = std::move(w.raw);
  out.weight_maps = std::move(w.normalized);
  out.fused = fuse(out.view_features, out.weight_maps, views);
  out.scene_pred = decode_scene(out.fused, p, cfg);
  return out;
}

Tensor loss_view(std::span<const Tensor> view_preds, std::span<const Tensor> view_gts) {
  if (view_preds.empty()) throw ShapeError("loss_view: no views");
  if (view_preds.size() != view_gts.size()) {
    throw ShapeError("loss_view: " + std::to_string(view_preds.size()) +
                     " predictions vs " + std::to_string(view_gts.size()) +
                     " ground truths");
  }
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < view_preds.size(); ++i) {
    terms.push_back(sse(view_preds[i], view_gts[i]));
  }
  return scalar_mul(sum_over_views(terms), 1.0 / static_cast<double>(terms.size()));
}

Tensor loss_scene(const Tensor& scene_pred, const Tensor& scene_gt) {
  return mse(scene_pred, scene_gt);
}

Tensor loss_total(const Tensor& loss_s, const Tensor& loss_v, double lambda) {
  if (lambda == 0.0) return loss_s;
  return add(loss_s, scalar_mul(loss_v, lambda));
}

}  // namespace viewfuse
