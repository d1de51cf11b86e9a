#include "viewfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "viewfuse/dataset_io.hpp"
#include "viewfuse/error.hpp"
#include "viewfuse/log.hpp"
#include "viewfuse/parallel.hpp"

namespace viewfuse {

namespace {

constexpr const char* kCountingPrefix = "counting_head.";
constexpr const char* kDiscriminatorPrefix = "discriminator.";

// Stream tags for derive_seed; kept apart so stages never share draws.
constexpr std::uint64_t kStageStream = 0x5A6E0000ull;
constexpr std::uint64_t kValStream = 0x7A1D0000ull;
constexpr std::uint64_t kAdaptStream = 0xADA70000ull;

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    std::swap(v[static_cast<std::size_t>(i)],
              v[static_cast<std::size_t>(uniform_int(rng, 0, i))]);
  }
}

bool has_prefix(const std::string& s, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (s.rfind(p, 0) == 0) return true;
  }
  return false;
}

GradSet filter_grads(GradSet g, const std::vector<std::string>& prefixes) {
  for (auto it = g.begin(); it != g.end();) {
    it = has_prefix(it->first, prefixes) ? std::next(it) : g.erase(it);
  }
  return g;
}

std::vector<Tensor> view_targets(const MultiViewFrame& f, const std::vector<int>& views) {
  std::vector<Tensor> out;
  for (int v : views) out.push_back(f.view_gts[static_cast<std::size_t>(v)].as_tensor());
  return out;
}

// Scene target restricted to people inside the union of the selected views'
// fields of view; equals the full target when every person is covered.
Array2 subset_scene_gt(const MultiViewFrame& f, const std::vector<int>& views,
                       const GroundGrid& grid, double sigma) {
  if (views.size() == f.masks.size()) {
    bool all_visible = true;
    for (const auto& p : f.people_world) {
      const Point2 c = grid.world_to_cell(p);
      if (!grid.contains_cell(c)) continue;
      bool seen = false;
      for (const auto& m : f.masks) {
        if (m.at(static_cast<int>(std::lround(c.y)), static_cast<int>(std::lround(c.x)))) {
          seen = true;
          break;
        }
      }
      if (!seen) {
        all_visible = false;
        break;
      }
    }
    if (all_visible) return f.scene_gt;
  }
  std::vector<Point2> kept;
  for (const auto& p : f.people_world) {
    const Point2 c = grid.world_to_cell(p);
    if (!grid.contains_cell(c)) continue;
    for (int v : views) {
      if (f.masks[static_cast<std::size_t>(v)].at(static_cast<int>(std::lround(c.y)),
                                                  static_cast<int>(std::lround(c.x)))) {
        kept.push_back(p);
        break;
      }
    }
  }
  return make_scene_gt(kept, grid, sigma);
}

OptimizerConfig stage_optimizer(const TrainConfig& t, std::int64_t total_steps) {
  OptimizerConfig o = t.optimizer;
  if (o.milestones.empty()) {
    for (double f : t.lr_decay_at) {
      o.milestones.push_back(static_cast<std::int64_t>(std::llround(f * total_steps)));
    }
  }
  return o;
}

}  // namespace

void TrainConfig::validate() const {
  for (int s : stages) {
    if (s < 1 || s > 3) throw ConfigError("train: stages must be in {1,2,3}");
  }
  if (epochs_stage1 < 0 || epochs_stage2 < 0 || epochs_stage3 < 0) {
    throw ConfigError("train: epochs must be >= 0");
  }
  if (views_per_sample < 0) throw ConfigError("train: views_per_sample must be >= 0");
  if (resamples_per_frame < 1) throw ConfigError("train: resamples_per_frame must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
  if (eval_resamples < 1) throw ConfigError("train: eval_resamples must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
  for (double f : lr_decay_at) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("train: lr_decay_at entries must be in [0,1]");
  }
}

void AdaptConfig::validate() const {
  if (!(target_label_fraction > 0.0 && target_label_fraction <= 1.0)) {
    throw ConfigError("adapt: target_label_fraction must be in (0,1]");
  }
  if (discriminator_channels.empty()) throw ConfigError("adapt: discriminator_channels is empty");
  for (int c : discriminator_channels) {
    if (c < 1) throw ConfigError("adapt: discriminator channel counts must be >= 1");
  }
  if (!(adversarial_loss_weight >= 0.0)) {
    throw ConfigError("adapt: adversarial_loss_weight must be >= 0");
  }
  if (epochs < 0) throw ConfigError("adapt: epochs must be >= 0");
}

std::vector<int> select_views(int n_views, int k, Rng& rng) {
  if (n_views < 1) throw ConfigError("select_views: no views available");
  if (k < 0 || k > n_views) {
    throw ConfigError("select_views: requested " + std::to_string(k) + " views but only " +
                      std::to_string(n_views) + " are available");
  }
  std::vector<int> all(static_cast<std::size_t>(n_views));
  std::iota(all.begin(), all.end(), 0);
  if (k == 0 || k == n_views) return all;
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    std::swap(all[static_cast<std::size_t>(i)],
              all[static_cast<std::size_t>(uniform_int(rng, i, n_views - 1))]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

DataSplit split_frames(int n_frames, int n_val) {
  if (n_val < 0 || n_val >= n_frames) {
    throw ConfigError("split_frames: need 0 <= val_frames < frames (" +
                      std::to_string(n_val) + " of " + std::to_string(n_frames) + ")");
  }
  DataSplit s;
  for (int i = 0; i < n_frames - n_val; ++i) s.train.push_back(i);
  for (int i = n_frames - n_val; i < n_frames; ++i) s.val.push_back(i);
  return s;
}

Trainer::Trainer(const Dataset& ds, DataSplit split, ModelConfig mcfg, TrainConfig tcfg,
                 EvalSettings eval, int workers)
    : ds_(ds),
      split_(std::move(split)),
      mcfg_(std::move(mcfg)),
      tcfg_(std::move(tcfg)),
      eval_(eval),
      workers_(std::max(1, workers)) {
  mcfg_.validate();
  tcfg_.validate();
  if (split_.train.empty()) throw ConfigError("train: no training frames");
  const int n_views = static_cast<int>(ds_.model_cameras.size());
  if (tcfg_.views_per_sample > n_views) {
    throw ConfigError("train: views_per_sample " + std::to_string(tcfg_.views_per_sample) +
                      " exceeds the " + std::to_string(n_views) + " available views");
  }
  geometry_ = SceneGeometry::build(ds_.model_cameras, ds_.scene.grid, mcfg_);
  Rng rng(derive_seed(tcfg_.seed, 11));
  add_conv_params(head_, kCountingPrefix, 0, mcfg_.feature_channels(), 1, 1, 1.0, rng);
}

void Trainer::check_finite(int stage, std::int64_t step, const StepLoss& l) const {
  const bool bad = !std::isfinite(l.total) || !std::isfinite(l.view) ||
                   !std::isfinite(l.scene) || std::abs(l.total) > tcfg_.divergence_limit;
  if (!bad) return;
  std::ostringstream os;
  os << "training diverged in stage " << stage << " at step " << step
     << ": loss_view=" << l.view << " loss_scene=" << l.scene << " loss_total=" << l.total
     << " (limit " << tcfg_.divergence_limit << "); try a lower learning rate";
  throw DivergenceError(os.str());
}

void Trainer::run_stage(int stage, int epochs, ParamSet& params, const SampleFn& fn,
                        const std::function<void(int, const ParamSet&)>& after_epoch) {
  if (epochs == 0) return;
  const int n_views = static_cast<int>(ds_.model_cameras.size());
  const std::size_t per_epoch =
      split_.train.size() * static_cast<std::size_t>(tcfg_.resamples_per_frame);
  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((per_epoch + tcfg_.batch_size - 1) / tcfg_.batch_size);
  Optimizer opt(stage_optimizer(tcfg_, steps_per_epoch * epochs));
  std::int64_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(tcfg_.seed, kStageStream + 1000u * stage + epoch));
    std::vector<std::pair<int, std::vector<int>>> samples;
    for (int f : split_.train) {
      for (int r = 0; r < tcfg_.resamples_per_frame; ++r) {
        samples.emplace_back(f, select_views(n_views, tcfg_.views_per_sample, rng));
      }
    }
    shuffle(samples, rng);
    for (std::size_t b = 0; b < samples.size(); b += tcfg_.batch_size) {
      const std::size_t n = std::min<std::size_t>(tcfg_.batch_size, samples.size() - b);
      std::vector<GradSet> grads(n);
      std::vector<StepLoss> losses(n);
      parallel_for(n, workers_, [&](std::size_t i) {
        losses[i] = fn(params, samples[b + i].first, samples[b + i].second, grads[i]);
      });
      GradSet total;
      StepLoss mean;
      for (std::size_t i = 0; i < n; ++i) {
        add_into(total, grads[i]);
        mean.view += losses[i].view / static_cast<double>(n);
        mean.scene += losses[i].scene / static_cast<double>(n);
        mean.total += losses[i].total / static_cast<double>(n);
      }
      check_finite(stage, step, mean);
      scale_grads(total, 1.0 / static_cast<double>(n));
      log_.push_back({stage, step, mean.view, mean.scene, mean.total, opt.learning_rate()});
      opt.step(params, total);
      ++step;
    }
    if (after_epoch) after_epoch(epoch, params);
  }
}

const Array2& Trainer::density(int frame, int view) const {
  return density_[static_cast<std::size_t>(frame)][static_cast<std::size_t>(view)];
}

ParamSet Trainer::stage1_pretrain(ParamSet params) {
  if (tcfg_.epochs_stage1 == 0) return params;
  const int stride = mcfg_.feature_stride();
  const std::size_t n_views = ds_.render_cameras.size();
  density_.assign(ds_.frames.size(), {});
  parallel_for(split_.train.size(), workers_, [&](std::size_t i) {
    const int f = split_.train[i];
    auto& slot = density_[static_cast<std::size_t>(f)];
    for (std::size_t v = 0; v < n_views; ++v) {
      slot.push_back(person_density(ds_.frames[static_cast<std::size_t>(f)].people_world,
                                    ds_.render_cameras[v], ds_.scene, stride));
    }
  });

  // Extractor plus the throwaway counting head.
  ParamSet work;
  for (const auto& b : params.blocks()) {
    if (b.name.rfind(kExtractorPrefix, 0) == 0) work.add(b.name, b.shape, b.values);
  }
  for (const auto& b : head_.blocks()) work.add(b.name, b.shape, b.values);

  auto fn = [&](const ParamSet& p, int frame, const std::vector<int>& views,
                GradSet& g) {
    ParamLeaves L(p, true);
    const auto& fr = ds_.frames[static_cast<std::size_t>(frame)];
    std::vector<Tensor> terms;
    for (int v : views) {
      const Tensor feat = extract_features(fr.images[static_cast<std::size_t>(v)].as_tensor(), L, mcfg_);
      const Tensor pred = conv2d(feat, L[std::string(kCountingPrefix) + "0.weight"],
                                 L[std::string(kCountingPrefix) + "0.bias"]);
      terms.push_back(mse(pred, density(frame, v).as_tensor()));
    }
    Tensor loss = scalar_mul(sum_over_views(terms), 1.0 / static_cast<double>(terms.size()));
    loss.backward();
    g = L.grads();
    return StepLoss{0.0, 0.0, loss.item()};
  };
  run_stage(1, tcfg_.epochs_stage1, work, fn, nullptr);
  params.assign_prefix(work, kExtractorPrefix);
  head_.assign_prefix(work, kCountingPrefix);
  return params;
}

std::pair<double, double> Trainer::counting_mass(const ParamSet& params,
                                                 const ParamSet& head, int frame,
                                                 int view) const {
  ParamSet work = params;
  for (const auto& b : head.blocks()) work.add(b.name, b.shape, b.values);
  ParamLeaves L(work, false);
  const auto& fr = ds_.frames[static_cast<std::size_t>(frame)];
  const Tensor feat =
      extract_features(fr.images[static_cast<std::size_t>(view)].as_tensor(), L, mcfg_);
  const Tensor pred = conv2d(feat, L[std::string(kCountingPrefix) + "0.weight"],
                             L[std::string(kCountingPrefix) + "0.bias"]);
  const Array2 target = person_density(fr.people_world,
                                       ds_.render_cameras[static_cast<std::size_t>(view)],
                                       ds_.scene, mcfg_.feature_stride());
  double p = 0.0, t = 0.0;
  for (double x : pred.values()) p += x;
  for (double x : target.data) t += x;
  return {p, t};
}

ParamSet Trainer::stage2_train_single_view(ParamSet params) {
  const std::vector<std::string> trainable{kExtractorPrefix, kViewDecoderPrefix};
  auto fn = [&](const ParamSet& p, int frame, const std::vector<int>& views, GradSet& g) {
    ParamLeaves L(p, true);
    const auto& fr = ds_.frames[static_cast<std::size_t>(frame)];
    std::vector<Tensor> preds;
    for (int v : views) {
      const Tensor feat =
          extract_features(fr.images[static_cast<std::size_t>(v)].as_tensor(), L, mcfg_);
      const Tensor proj =
          bilinear_sample(feat, geometry_.views[static_cast<std::size_t>(v)].sample_grid);
      preds.push_back(decode_view(proj, L, mcfg_));
    }
    Tensor lv = loss_view(preds, view_targets(fr, views));
    lv.backward();
    g = filter_grads(L.grads(), trainable);
    return StepLoss{lv.item(), 0.0, lv.item()};
  };
  run_stage(2, tcfg_.epochs_stage2, params, fn, nullptr);
  return params;
}

ParamSet Trainer::stage3_train_joint(ParamSet params) {
  std::vector<std::string> trainable{kExtractorPrefix, kViewDecoderPrefix,
                                     kSceneDecoderPrefix};
  if (mcfg_.fusion_mode != FusionMode::kMaskedAverage) trainable.push_back(kWeightNetPrefix);
  const double lambda = mcfg_.effective_lambda();
  auto fn = [&](const ParamSet& p, int frame, const std::vector<int>& views, GradSet& g) {
    ParamLeaves L(p, true);
    const auto& fr = ds_.frames[static_cast<std::size_t>(frame)];
    const ForwardOutput out = forward(fr, views, L, mcfg_, geometry_);
    const Tensor ls = loss_scene(
        out.scene_pred,
        subset_scene_gt(fr, views, ds_.scene.grid, ds_.scene.kernel_sigma_cells).as_tensor());
    const Tensor lv = loss_view(out.view_preds, view_targets(fr, views));
    Tensor total = loss_total(ls, lv, lambda);
    total.backward();
    g = filter_grads(L.grads(), trainable);
    return StepLoss{lv.item(), ls.item(), total.item()};
  };
  const bool validate = tcfg_.eval_every > 0 && !split_.val.empty();
  ParamSet best = params;
  auto after = [&](int epoch, const ParamSet& p) {
    if (!validate) return;
    const bool last = epoch + 1 == tcfg_.epochs_stage3;
    if ((epoch + 1) % tcfg_.eval_every != 0 && !last) return;
    const EvalResult r = evaluate_model(ds_, split_.val, p, mcfg_, geometry_, eval_,
                                        tcfg_.views_per_sample, tcfg_.eval_resamples,
                                        derive_seed(tcfg_.seed, kValStream), workers_);
    validations_.push_back({3, epoch, r.total});
    const double f1 = r.total.f1.value_or(0.0);
    if (f1 > best_f1_) {
      best_f1_ = f1;
      best_epoch_ = epoch;
      best = p;
    }
  };
  run_stage(3, tcfg_.epochs_stage3, params, fn, after);
  return validate && best_epoch_ ? best : params;
}

ParamSet Trainer::train(ParamSet params) {
  for (int s : tcfg_.stages) {
    if (s == 1) params = stage1_pretrain(std::move(params));
    if (s == 2 && mcfg_.effective_lambda() > 0.0) {
      params = stage2_train_single_view(std::move(params));
    }
    if (s == 3) params = stage3_train_joint(std::move(params));
  }
  return params;
}

Array2 predict_scene(const MultiViewFrame& frame, const std::vector<int>& views,
                     const ParamSet& params, const ModelConfig& mcfg,
                     const SceneGeometry& geometry) {
  ParamLeaves L(params, false);
  const ForwardOutput out = forward(frame, views, L, mcfg, geometry);
  Array2 a;
  a.rows = geometry.grid.height_cells;
  a.cols = geometry.grid.width_cells;
  const auto v = out.scene_pred.values();
  a.data.assign(v.begin(), v.end());
  return a;
}

EvalResult evaluate_model(const Dataset& ds, const std::vector<int>& frames,
                          const ParamSet& params, const ModelConfig& mcfg,
                          const SceneGeometry& geometry, const EvalSettings& settings,
                          int views_per_sample, int resamples, std::uint64_t seed,
                          int workers) {
  if (frames.empty()) throw ConfigError("evaluate: no frames");
  const int n_views = static_cast<int>(geometry.views.size());
  if (views_per_sample == 0 || views_per_sample == n_views) resamples = 1;
  EvalResult res;
  res.frames.resize(frames.size() * static_cast<std::size_t>(resamples));
  parallel_for(res.frames.size(), workers, [&](std::size_t i) {
    const int f = frames[i / static_cast<std::size_t>(resamples)];
    const int r = static_cast<int>(i % static_cast<std::size_t>(resamples));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(f) * 4096u + static_cast<std::uint64_t>(r)));
    const auto views = select_views(n_views, views_per_sample, rng);
    const auto& fr = ds.frames[static_cast<std::size_t>(f)];
    std::vector<const FovMask*> masks;
    for (int v : views) masks.push_back(&fr.masks[static_cast<std::size_t>(v)]);
    const auto gts = visible_gt_cells(fr.people_world, ds.scene.grid, masks);
    const Array2 pred = predict_scene(fr, views, params, mcfg, geometry);
    const DetectionSet dets = extract_detections(pred, settings.threshold, settings.nms_radius());
    res.frames[i] = FrameResult{f, views, match(dets, gts, settings.t_cells)};
  });
  std::vector<MatchResult> mrs;
  for (const auto& fr : res.frames) mrs.push_back(fr.match);
  res.total = aggregate(mrs, settings.t_cells, ds.scene.grid.cell_size_m);
  return res;
}

std::pair<std::vector<int>, std::vector<int>> split_labeled(const std::vector<int>& frames,
                                                            double fraction) {
  if (frames.empty()) throw ConfigError("adapt: no target frames");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("adapt: target_label_fraction must be in (0,1]");
  }
  const auto n = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(fraction * static_cast<double>(frames.size()))));
  std::vector<int> labeled(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<int> rest(frames.begin() + static_cast<std::ptrdiff_t>(n), frames.end());
  return {labeled, rest};
}

ParamSet init_discriminator(const AdaptConfig& acfg, int feature_channels,
                            std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  int c = feature_channels;
  int i = 0;
  for (int out : acfg.discriminator_channels) {
    add_conv_params(p, kDiscriminatorPrefix, i++, c, out, 3, 1.0, rng);
    c = out;
  }
  add_conv_params(p, kDiscriminatorPrefix, i, c, 1, 1, 1.0, rng);
  return p;
}

Tensor discriminator_logit(const Tensor& features, const ParamLeaves& p,
                           const AdaptConfig& acfg) {
  Tensor h = features;
  const int n = static_cast<int>(acfg.discriminator_channels.size());
  for (int i = 0; i < n; ++i) {
    const std::string base = kDiscriminatorPrefix + std::to_string(i);
    h = relu(conv2d(h, p[base + ".weight"], p[base + ".bias"], ConvOptions{1, 1, 1}));
  }
  h = global_avg_pool(h);
  const std::string base = kDiscriminatorPrefix + std::to_string(n);
  return conv2d(h, p[base + ".weight"], p[base + ".bias"]);
}

namespace {

Tensor domain_features(const ForwardOutput& out, const AdaptConfig& acfg) {
  if (acfg.discriminator_on_fused) return out.fused;
  return scalar_mul(sum_over_views(out.view_features),
                    1.0 / static_cast<double>(out.view_features.size()));
}

struct DetectionLoss {
  Tensor total;
  double view = 0.0;
  double scene = 0.0;
};

DetectionLoss detection_loss(const ForwardOutput& out, const MultiViewFrame& fr,
                             const std::vector<int>& views, const Dataset& ds,
                             double lambda) {
  const Tensor ls = loss_scene(
      out.scene_pred,
      subset_scene_gt(fr, views, ds.scene.grid, ds.scene.kernel_sigma_cells).as_tensor());
  const Tensor lv = loss_view(out.view_preds, view_targets(fr, views));
  return {loss_total(ls, lv, lambda), lv.item(), ls.item()};
}

}  // namespace

AdaptResult adapt(const Dataset& source, const std::vector<int>& source_frames,
                  const Dataset& target, const std::vector<int>& target_labeled,
                  const std::vector<int>& target_unlabeled, ParamSet params,
                  const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const AdaptConfig& acfg) {
  mcfg.validate();
  tcfg.validate();
  acfg.validate();
  if (source_frames.empty()) throw ConfigError("adapt: no source frames");
  if (target_labeled.empty() && target_unlabeled.empty()) {
    throw ConfigError("adapt: no target frames");
  }
  const SceneGeometry gs = SceneGeometry::build(source.model_cameras, source.scene.grid, mcfg);
  const SceneGeometry gt = SceneGeometry::build(target.model_cameras, target.scene.grid, mcfg);
  const int ns = static_cast<int>(gs.views.size());
  const int nt = static_cast<int>(gt.views.size());
  const int ks = tcfg.views_per_sample == 0 ? 0 : std::min(tcfg.views_per_sample, ns);
  const int kt = tcfg.views_per_sample == 0 ? 0 : std::min(tcfg.views_per_sample, nt);
  const double lambda = mcfg.effective_lambda();

  std::vector<std::string> trainable{kExtractorPrefix, kViewDecoderPrefix,
                                     kSceneDecoderPrefix};
  if (mcfg.fusion_mode != FusionMode::kMaskedAverage) trainable.push_back(kWeightNetPrefix);

  AdaptResult res;
  res.discriminator =
      init_discriminator(acfg, mcfg.feature_channels(), derive_seed(acfg.seed, kAdaptStream));
  OptimizerConfig mopt = tcfg.optimizer;
  mopt.milestones.clear();
  Optimizer model_opt(mopt);
  Optimizer disc_opt(acfg.discriminator_optimizer);

  std::vector<std::pair<int, bool>> target_pool;
  for (int f : target_labeled) target_pool.emplace_back(f, true);
  for (int f : target_unlabeled) target_pool.emplace_back(f, false);

  std::int64_t step = 0;
  std::size_t src_cursor = 0;
  std::vector<int> src_order = source_frames;
  for (int epoch = 0; epoch < acfg.epochs; ++epoch) {
    Rng rng(derive_seed(acfg.seed, kAdaptStream + 1u + static_cast<std::uint64_t>(epoch)));
    auto order = target_pool;
    shuffle(order, rng);
    int correct = 0, seen = 0;
    for (const auto& [tf, labeled] : order) {
      if (src_cursor == 0) shuffle(src_order, rng);
      const int sf = src_order[src_cursor];
      src_cursor = (src_cursor + 1) % src_order.size();
      const auto sviews = select_views(ns, ks, rng);
      const auto tviews = select_views(nt, kt, rng);
      const auto& sfr = source.frames[static_cast<std::size_t>(sf)];
      const auto& tfr = target.frames[static_cast<std::size_t>(tf)];

      ParamLeaves L(params, true);
      const ForwardOutput so = forward(sfr, sviews, L, mcfg, gs);
      const ForwardOutput to = forward(tfr, tviews, L, mcfg, gt);
      const Tensor fs = domain_features(so, acfg);
      const Tensor ft = domain_features(to, acfg);

      // Discriminator update on detached features.
      {
        ParamLeaves D(res.discriminator, true);
        const Tensor ls = discriminator_logit(fs.detach(), D, acfg);
        const Tensor lt = discriminator_logit(ft.detach(), D, acfg);
        correct += (ls.item() > 0.0) + (lt.item() <= 0.0);
        seen += 2;
        Tensor dl = scalar_mul(add(bce_with_logits(ls, 1.0), bce_with_logits(lt, 0.0)), 0.5);
        dl.backward();
        disc_opt.step(res.discriminator, D.grads());
      }

      // Model update: detection losses plus the reversed discriminator loss.
      const DetectionLoss src_loss = detection_loss(so, sfr, sviews, source, lambda);
      Tensor total = src_loss.total;
      double lv = src_loss.view, lsc = src_loss.scene;
      if (labeled) {
        const DetectionLoss tl = detection_loss(to, tfr, tviews, target, lambda);
        total = add(total, tl.total);
        lv += tl.view;
        lsc += tl.scene;
      }
      if (acfg.adversarial_loss_weight > 0.0) {
        ParamLeaves D(res.discriminator, false);
        const Tensor adv = bce_with_logits(
            discriminator_logit(gradient_reversal(ft, acfg.adversarial_loss_weight), D, acfg),
            0.0);
        total = add(total, adv);
      }
      const double tv = total.item();
      if (!std::isfinite(tv) || std::abs(tv) > tcfg.divergence_limit) {
        std::ostringstream os;
        os << "adaptation diverged at step " << step << ": loss_total=" << tv;
        throw DivergenceError(os.str());
      }
      res.log.push_back({4, step, lv, lsc, tv, model_opt.learning_rate()});
      total.backward();
      model_opt.step(params, filter_grads(L.grads(), trainable));
      ++step;
    }
    const double acc = seen ? static_cast<double>(correct) / seen : 0.0;
    res.disc_accuracy.push_back(acc);
    if (seen > 0 && correct == seen) {
      log_warning("adapt: discriminator accuracy stayed at 1.0 for epoch " +
                  std::to_string(epoch) + "; the adversary is degenerate");
    }
  }
  res.params = std::move(params);
  return res;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log,
                    const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "# config_hash=" << config_hash << '\n';
  os << "stage,step,loss_view,loss_scene,loss_total,lr\n";
  for (const auto& r : log) {
    os << r.stage << ',' << r.step << ',' << format_real(r.loss_view) << ','
       << format_real(r.loss_scene) << ',' << format_real(r.loss_total) << ','
       << format_real(r.lr) << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace viewfuse
