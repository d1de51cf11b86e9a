#include "viewfuse/gradsuite.hpp"

#include <cmath>

#include "viewfuse/ops.hpp"
#include "viewfuse/params.hpp"
#include "viewfuse/training.hpp"

namespace viewfuse {

namespace {

// Random leaf whose entries stay at least `gap` away from zero, so kinked
// ops (relu) are not evaluated across their kink.
Tensor random_leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                   double gap = 0.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    do {
      x = uniform(rng, lo, hi);
    } while (std::abs(x) < gap);
  }
  return Tensor::from(shape, std::move(v), true);
}

Tensor random_const(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(shape, std::move(v), false);
}

// Reduces any tensor to a scalar through fixed random weights so every output
// coordinate influences the checked value differently.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(elementwise_mul(y, random_const(y.shape(), rng)));
}

struct Suite {
  std::vector<GradSuiteEntry> entries;
  std::uint64_t seed;

  void op(const std::string& name, const std::function<Tensor()>& f,
          const std::vector<NamedLeaf>& leaves) {
    GradCheckOptions o;
    o.h = 1e-5;
    o.tolerance = kOpTolerance;
    o.seed = seed;
    entries.push_back({name, false, kOpTolerance, grad_check(f, leaves, o)});
  }
};

GradCheckReport check_gradient_reversal(Rng& rng, std::uint64_t seed) {
  // Forward is the identity, so the analytic gradient must equal -scale
  // times the numeric derivative of the forward value.
  const double scale = 0.7;
  Tensor x = random_leaf({2, 3, 3}, rng);
  auto f = [&] { return probe(gradient_reversal(x, scale), seed); };
  Tensor loss = f();
  loss.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  GradCheckReport r;
  auto vals = x.mutable_values();
  const double h = 1e-5;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = f().item();
    vals[i] = orig - h;
    const double down = f().item();
    vals[i] = orig;
    const double expected = -scale * (up - down) / (2 * h);
    const double rel = std::abs(analytic[i] - expected) /
                       std::max({std::abs(analytic[i]), std::abs(expected), 1e-8});
    ++r.coords_checked;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_leaf = "x";
      r.worst_index = i;
      r.worst_analytic = analytic[i];
      r.worst_numeric = expected;
    }
  }
  r.pass = r.max_rel_error < kOpTolerance;
  return r;
}

// Zero-initialised biases put relu pre-activations exactly on the kink
// wherever the layer input is zero; generic instances avoid that.
ParamSet randomize_biases(ParamSet p, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& b : p.blocks()) {
    if (b.name.size() > 5 && b.name.compare(b.name.size() - 5, 5, ".bias") == 0) {
      for (auto& v : b.values) v = uniform(rng, -0.2, 0.2);
    }
  }
  return p;
}

std::vector<NamedLeaf> leaves_of(const ParamSet& p, const ParamLeaves& L) {
  std::vector<NamedLeaf> out;
  for (const auto& b : p.blocks()) out.emplace_back(b.name, L[b.name]);
  return out;
}

GradSuiteEntry model_check(const std::string& name, std::uint64_t seed, FusionMode mode,
                           WeightActivation act) {
  const TinySetup s = tiny_setup(seed, mode, act);
  const ParamSet params =
      randomize_biases(init_model_params(s.model, derive_seed(seed, 2)), derive_seed(seed, 4));
  const ParamLeaves L(params, true);
  const SceneGeometry g = SceneGeometry::build(s.dataset.model_cameras, s.scene.grid, s.model);
  const MultiViewFrame& fr = s.dataset.frames[0];
  const std::vector<int> views{0, 1};
  const double lambda = mode == FusionMode::kSupervisedWeighted ? 1.0 : 0.0;
  auto f = [&] {
    const ForwardOutput out = forward(fr, views, L, s.model, g);
    std::vector<Tensor> gts{fr.view_gts[0].as_tensor(), fr.view_gts[1].as_tensor()};
    return loss_total(loss_scene(out.scene_pred, fr.scene_gt.as_tensor()),
                      loss_view(out.view_preds, gts), lambda);
  };
  GradCheckOptions o;
  o.h = 1e-5;
  o.five_point = true;
  o.tolerance = kModelTolerance;
  o.seed = seed;
  return {name, true, kModelTolerance, grad_check(f, leaves_of(params, L), o)};
}

GradSuiteEntry discriminator_check(std::uint64_t seed) {
  const TinySetup s = tiny_setup(seed);
  AdaptConfig acfg;
  acfg.discriminator_channels = {3};
  const ParamSet params =
      randomize_biases(init_model_params(s.model, derive_seed(seed, 2)), derive_seed(seed, 4));
  const ParamSet disc = randomize_biases(
      init_discriminator(acfg, s.model.feature_channels(), derive_seed(seed, 3)),
      derive_seed(seed, 5));
  const ParamLeaves L(params, true);
  const ParamLeaves D(disc, true);
  const SceneGeometry g = SceneGeometry::build(s.dataset.model_cameras, s.scene.grid, s.model);
  const std::vector<int> views{0, 1};
  auto f = [&] {
    const ForwardOutput out = forward(s.dataset.frames[0], views, L, s.model, g);
    return bce_with_logits(discriminator_logit(out.fused, D, acfg), 0.0);
  };
  std::vector<NamedLeaf> leaves = leaves_of(params, L);
  for (auto& l : leaves_of(disc, D)) leaves.push_back(l);
  GradCheckOptions o;
  o.h = 1e-5;
  o.five_point = true;
  o.tolerance = kModelTolerance;
  o.seed = seed;
  return {"model/discriminator_bce", true, kModelTolerance, grad_check(f, leaves, o)};
}

}  // namespace

TinySetup tiny_setup(std::uint64_t seed, FusionMode mode, WeightActivation act) {
  TinySetup s;
  s.scene.grid = {12, 12, 0.5, 0.0, 0.0};
  s.scene.render.image_width = 24;
  s.scene.render.image_height = 18;
  s.scene.render.blob_base_radius_px = 2.0;
  s.scene.people_min = 3;
  s.scene.people_max = 4;
  s.scene.kernel_sigma_cells = 1.0;
  s.scene.calib_noise = CalibNoise{0.5, 0.05};
  s.scene.cameras.push_back(look_at({3.0, -4.0, 5.0}, {3.0, 3.0, 0.0}, 14.0, 24, 18));
  s.scene.cameras.push_back(look_at({-4.0, 3.0, 5.0}, {3.0, 3.0, 0.0}, 14.0, 24, 18));
  s.dataset = generate_dataset(s.scene, 1, seed);
  s.model.extractor_channels = {3, 4};
  s.model.extractor_strides = {1, 2};
  s.model.decoder_view_channels = {3, 1};
  s.model.decoder_scene_channels = {3, 1};
  s.model.decoder_scene_dilations = {1, 2};
  s.model.weight_subnet_channels = {3, 3, 2, 1};
  s.model.weight_final_gain = 1.0;
  s.model.fusion_mode = mode;
  s.model.weight_activation = act;
  return s;
}

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, bool include_model) {
  Suite s{{}, seed};
  Rng rng(seed);

  for (const ConvOptions opts : {ConvOptions{0, 1, 1}, ConvOptions{1, 1, 1},
                                 ConvOptions{1, 2, 1}, ConvOptions{2, 1, 2}}) {
    Tensor x = random_leaf({2, 7, 6}, rng);
    Tensor k = random_leaf({3, 2, 3, 3}, rng);
    Tensor b = random_leaf({3}, rng);
    s.op("conv2d/p" + std::to_string(opts.padding) + "s" + std::to_string(opts.stride) + "d" +
             std::to_string(opts.dilation),
         [&] { return probe(conv2d(x, k, b, opts), seed); }, {{"x", x}, {"kernel", k}, {"bias", b}});
  }
  {
    Tensor x = random_leaf({2, 4, 4}, rng, -1, 1, 0.05);
    s.op("relu", [&] { return probe(relu(x), seed); }, {{"x", x}});
  }
  {
    Tensor x = random_leaf({2, 4, 4}, rng, -3, 3);
    s.op("softplus", [&] { return probe(softplus(x), seed); }, {{"x", x}});
  }
  {
    Tensor a = random_leaf({3, 4}, rng);
    Tensor b = random_leaf({3, 4}, rng);
    s.op("add", [&] { return probe(add(a, b), seed); }, {{"a", a}, {"b", b}});
    s.op("sub", [&] { return probe(sub(a, b), seed); }, {{"a", a}, {"b", b}});
    s.op("elementwise_mul", [&] { return probe(elementwise_mul(a, b), seed); },
         {{"a", a}, {"b", b}});
    s.op("scalar_mul", [&] { return probe(scalar_mul(a, -1.7), seed); }, {{"a", a}});
    s.op("add_scalar", [&] { return probe(add_scalar(a, 0.3), seed); }, {{"a", a}});
    s.op("sum", [&] { return scalar_mul(sum(a), 1.3); }, {{"a", a}});
    s.op("mse", [&] { return mse(a, b); }, {{"a", a}, {"b", b}});
    s.op("sse", [&] { return sse(a, b); }, {{"a", a}, {"b", b}});
  }
  {
    Tensor a = random_leaf({3, 4}, rng);
    Tensor b = random_leaf({3, 4}, rng, 0.5, 2.0);
    s.op("elementwise_div", [&] { return probe(elementwise_div(a, b), seed); },
         {{"a", a}, {"b", b}});
  }
  {
    std::vector<Tensor> xs{random_leaf({2, 3, 3}, rng), random_leaf({2, 3, 3}, rng),
                           random_leaf({2, 3, 3}, rng)};
    s.op("sum_over_views", [&] { return probe(sum_over_views(xs), seed); },
         {{"x0", xs[0]}, {"x1", xs[1]}, {"x2", xs[2]}});
  }
  {
    Tensor x = random_leaf({1, 3, 4}, rng);
    s.op("tile_channels", [&] { return probe(tile_channels(x, 3), seed); }, {{"x", x}});
    Tensor y = random_leaf({3, 4, 5}, rng);
    s.op("global_avg_pool", [&] { return probe(global_avg_pool(y), seed); }, {{"x", y}});
  }
  {
    Tensor l = random_leaf({1}, rng, -3, 3);
    s.op("bce_with_logits/1", [&] { return bce_with_logits(l, 1.0); }, {{"logit", l}});
    s.op("bce_with_logits/0", [&] { return bce_with_logits(l, 0.0); }, {{"logit", l}});
  }
  s.entries.push_back({"gradient_reversal", false, kOpTolerance, check_gradient_reversal(rng, seed)});
  {
    Tensor x = random_leaf({2, 5, 6}, rng);
    std::vector<double> gv;
    for (int i = 0; i < 4 * 4; ++i) {
      gv.push_back(uniform(rng, -1.4, 6.4));  // some samples fall partly outside
      gv.push_back(uniform(rng, -1.4, 5.4));
    }
    Tensor grid = Tensor::from({4, 4, 2}, gv, false);
    s.op("bilinear_sample", [&] { return probe(bilinear_sample(x, grid), seed); }, {{"x", x}});
  }
  {
    // Weight normalisation and fusion on 3 views with partial masks.
    std::vector<Tensor> raw, masks, feats;
    for (int v = 0; v < 3; ++v) {
      raw.push_back(random_leaf({1, 4, 4}, rng, 0.1, 2.0));
      feats.push_back(random_leaf({2, 4, 4}, rng));
      std::vector<double> m(16);
      for (auto& x : m) x = uniform01(rng) < 0.7 ? 1.0 : 0.0;
      masks.push_back(Tensor::from({1, 4, 4}, m, false));
    }
    const std::vector<NamedLeaf> raw_leaves{{"w0", raw[0]}, {"w1", raw[1]}, {"w2", raw[2]}};
    s.op("normalize_weights", [&] {
      const WeightMaps w = normalize_weights(raw, masks, 1e-3);
      std::vector<Tensor> terms;
      for (std::size_t i = 0; i < w.normalized.size(); ++i) {
        terms.push_back(probe(w.normalized[i], seed + i));
      }
      return sum_over_views(terms);
    }, raw_leaves);
    std::vector<NamedLeaf> fuse_leaves = raw_leaves;
    for (int v = 0; v < 3; ++v) fuse_leaves.emplace_back("f" + std::to_string(v), feats[v]);
    s.op("fuse", [&] {
      const WeightMaps w = normalize_weights(raw, masks, 1e-3);
      return probe(fuse(feats, w.normalized), seed);
    }, fuse_leaves);
  }
  {
    std::vector<Tensor> preds{random_leaf({1, 4, 4}, rng), random_leaf({1, 4, 4}, rng)};
    std::vector<Tensor> gts{random_const({1, 4, 4}, rng), random_const({1, 4, 4}, rng)};
    Tensor ps = random_leaf({1, 4, 4}, rng);
    s.op("loss_view", [&] { return loss_view(preds, gts); }, {{"v0", preds[0]}, {"v1", preds[1]}});
    s.op("loss_total", [&] {
      return loss_total(loss_scene(ps, gts[0]), loss_view(preds, gts), 0.8);
    }, {{"vs", ps}, {"v0", preds[0]}, {"v1", preds[1]}});
  }

  if (include_model) {
    s.entries.push_back(model_check("model/supervised_weighted_relu", seed,
                                    FusionMode::kSupervisedWeighted, WeightActivation::kRelu));
    s.entries.push_back(model_check("model/supervised_weighted_softplus", seed,
                                    FusionMode::kSupervisedWeighted, WeightActivation::kSoftplus));
    s.entries.push_back(model_check("model/unsupervised_weighted", seed,
                                    FusionMode::kUnsupervisedWeighted, WeightActivation::kRelu));
    s.entries.push_back(model_check("model/masked_average", seed, FusionMode::kMaskedAverage,
                                    WeightActivation::kRelu));
    s.entries.push_back(discriminator_check(seed));
  }
  return s.entries;
}

}  // namespace viewfuse
