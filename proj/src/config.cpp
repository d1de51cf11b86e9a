#include "viewfuse/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "viewfuse/archive.hpp"
#include "viewfuse/error.hpp"

namespace viewfuse {

using nlohmann::json;

namespace {

// Object reader that records which keys were consumed so leftovers can be
// reported as typos.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T req(const std::string& key) {
    used_.insert(key);
    if (!has(key)) throw ConfigError(where_ + ": missing key '" + key + "'");
    return convert<T>(key);
  }

  void skip(const std::string& key) { used_.insert(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) {
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

 private:
  template <typename T>
  T convert(const std::string& key) const {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (" + v.dump() + ")");
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

std::vector<double> number_list(const json& j, const std::string& where, std::size_t n) {
  if (!j.is_array() || j.size() != n) {
    throw ConfigError(where + ": expected " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number()) throw ConfigError(where + ": expected numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

Mat3 mat3_from(const json& j, const std::string& where) {
  const auto v = number_list(j, where, 9);
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = v[static_cast<std::size_t>(r * 3 + c)];
  }
  return m;
}

json mat3_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  }
  return a;
}

Vec3 vec3_from(const json& j, const std::string& where) {
  const auto v = number_list(j, where, 3);
  return Vec3(v[0], v[1], v[2]);
}

std::string kind_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd-momentum";
}

OptimizerConfig optimizer_from_json(const json& j, const std::string& where,
                                    OptimizerConfig o) {
  Reader r(j, where);
  const std::string kind = r.get<std::string>("kind", kind_name(o.kind));
  if (kind == "adam") {
    o.kind = OptimizerKind::kAdam;
  } else if (kind == "sgd-momentum") {
    o.kind = OptimizerKind::kSgdMomentum;
  } else {
    throw ConfigError(where + ".kind: unknown optimizer '" + kind + "'");
  }
  o.learning_rate = r.get("learning_rate", o.learning_rate);
  o.momentum = r.get("momentum", o.momentum);
  o.beta1 = r.get("beta1", o.beta1);
  o.beta2 = r.get("beta2", o.beta2);
  o.epsilon = r.get("epsilon", o.epsilon);
  o.milestones = r.get("milestones", o.milestones);
  o.decay = r.get("decay", o.decay);
  o.grad_clip = r.get("grad_clip", o.grad_clip);
  r.finish();
  return o;
}

json to_json(const OptimizerConfig& o) {
  return {{"kind", kind_name(o.kind)}, {"learning_rate", o.learning_rate},
          {"momentum", o.momentum},    {"beta1", o.beta1},
          {"beta2", o.beta2},          {"epsilon", o.epsilon},
          {"milestones", o.milestones}, {"decay", o.decay},
          {"grad_clip", o.grad_clip}};
}

CameraModel camera_from_json(const json& j, const std::string& where, int w, int h) {
  Reader r(j, where);
  CameraModel cam;
  if (r.has("position")) {
    const Vec3 pos = vec3_from(r.raw("position"), r.path("position"));
    const Vec3 target = vec3_from(r.raw("target"), r.path("target"));
    cam = look_at(pos, target, r.req<double>("focal_px"), w, h);
  } else {
    cam.intrinsics = mat3_from(r.raw("intrinsics"), r.path("intrinsics"));
    cam.rotation = mat3_from(r.raw("rotation"), r.path("rotation"));
    cam.translation = vec3_from(r.raw("translation"), r.path("translation"));
    cam.image_width = w;
    cam.image_height = h;
  }
  r.finish();
  return cam;
}

TrainConfig train_from_json(const json& j) {
  Reader r(j, "train");
  TrainConfig t;
  t.stages = r.get("stages", t.stages);
  if (r.has("epochs")) {
    Reader e(r.raw("epochs"), "train.epochs");
    t.epochs_stage1 = e.get("stage1", t.epochs_stage1);
    t.epochs_stage2 = e.get("stage2", t.epochs_stage2);
    t.epochs_stage3 = e.get("stage3", t.epochs_stage3);
    e.finish();
  } else {
    r.skip("epochs");
  }
  if (r.has("optimizer")) {
    t.optimizer = optimizer_from_json(r.raw("optimizer"), "train.optimizer", t.optimizer);
  } else {
    r.skip("optimizer");
  }
  t.lr_decay_at = r.get("lr_decay_at", t.lr_decay_at);
  t.views_per_sample = r.get("views_per_sample", t.views_per_sample);
  t.resamples_per_frame = r.get("resamples_per_frame", t.resamples_per_frame);
  t.batch_size = r.get("batch_size", t.batch_size);
  t.eval_every = r.get("eval_every", t.eval_every);
  t.eval_resamples = r.get("eval_resamples", t.eval_resamples);
  t.divergence_limit = r.get("divergence_limit", t.divergence_limit);
  r.finish();
  return t;
}

json to_json(const TrainConfig& t) {
  return {{"stages", t.stages},
          {"epochs",
           {{"stage1", t.epochs_stage1}, {"stage2", t.epochs_stage2}, {"stage3", t.epochs_stage3}}},
          {"optimizer", to_json(t.optimizer)},
          {"lr_decay_at", t.lr_decay_at},
          {"views_per_sample", t.views_per_sample},
          {"resamples_per_frame", t.resamples_per_frame},
          {"batch_size", t.batch_size},
          {"eval_every", t.eval_every},
          {"eval_resamples", t.eval_resamples},
          {"divergence_limit", t.divergence_limit}};
}

AdaptExperiment adapt_from_json(const json& j, const SceneConfig& fallback_scene) {
  Reader r(j, "adapt");
  AdaptExperiment a;
  a.adapt.target_label_fraction = r.get("target_label_fraction", a.adapt.target_label_fraction);
  a.adapt.discriminator_channels = r.get("discriminator_channels", a.adapt.discriminator_channels);
  a.adapt.adversarial_loss_weight =
      r.get("adversarial_loss_weight", a.adapt.adversarial_loss_weight);
  a.adapt.epochs = r.get("epochs", a.adapt.epochs);
  if (r.has("discriminator_optimizer")) {
    a.adapt.discriminator_optimizer = optimizer_from_json(
        r.raw("discriminator_optimizer"), "adapt.discriminator_optimizer",
        a.adapt.discriminator_optimizer);
  } else {
    r.skip("discriminator_optimizer");
  }
  a.adapt.discriminator_on_fused = r.get("discriminator_on_fused", a.adapt.discriminator_on_fused);
  a.target_scene = r.has("target_scene") ? scene_from_json(r.raw("target_scene")) : fallback_scene;
  r.skip("target_scene");
  a.target_train_frames = r.get("target_train_frames", a.target_train_frames);
  a.target_test_frames = r.get("target_test_frames", a.target_test_frames);
  a.target_path = r.get<std::string>("target_path", a.target_path);
  r.finish();
  return a;
}

json to_json(const AdaptExperiment& a) {
  return {{"target_label_fraction", a.adapt.target_label_fraction},
          {"discriminator_channels", a.adapt.discriminator_channels},
          {"adversarial_loss_weight", a.adapt.adversarial_loss_weight},
          {"epochs", a.adapt.epochs},
          {"discriminator_optimizer", to_json(a.adapt.discriminator_optimizer)},
          {"discriminator_on_fused", a.adapt.discriminator_on_fused},
          {"target_scene", to_json(a.target_scene)},
          {"target_train_frames", a.target_train_frames},
          {"target_test_frames", a.target_test_frames},
          {"target_path", a.target_path}};
}

}  // namespace

std::vector<CameraModel> camera_ring(int count, Point2 center_m, double radius_m,
                                     double height_m, double focal_px, double phase_deg,
                                     int image_width, int image_height) {
  std::vector<CameraModel> out;
  const double pi = std::acos(-1.0);
  for (int k = 0; k < count; ++k) {
    const double a = phase_deg * pi / 180.0 + 2.0 * pi * k / count;
    const Vec3 target(center_m.x, center_m.y, 0.0);
    const Vec3 pos(center_m.x + radius_m * std::cos(a), center_m.y + radius_m * std::sin(a),
                   height_m);
    out.push_back(look_at(pos, target, focal_px, image_width, image_height));
  }
  return out;
}

SceneConfig scene_from_json(const json& j) {
  Reader r(j, "scene");
  SceneConfig s;
  {
    Reader g(r.raw("grid"), "scene.grid");
    s.grid.width_cells = g.req<int>("width_cells");
    s.grid.height_cells = g.req<int>("height_cells");
    s.grid.cell_size_m = g.req<double>("cell_size_m");
    if (g.has("origin_m")) {
      const auto o = number_list(g.raw("origin_m"), "scene.grid.origin_m", 2);
      s.grid.origin_x_m = o[0];
      s.grid.origin_y_m = o[1];
    } else {
      g.skip("origin_m");
    }
    g.finish();
  }
  if (r.has("render")) {
    Reader g(r.raw("render"), "scene.render");
    RenderConfig& rc = s.render;
    rc.image_width = g.get("image_width", rc.image_width);
    rc.image_height = g.get("image_height", rc.image_height);
    rc.blob_base_radius_px = g.get("blob_base_radius_px", rc.blob_base_radius_px);
    rc.reference_depth_m = g.get("reference_depth_m", rc.reference_depth_m);
    rc.blob_aspect = g.get("blob_aspect", rc.blob_aspect);
    rc.person_intensity = g.get("person_intensity", rc.person_intensity);
    rc.occlusion = g.get("occlusion", rc.occlusion);
    rc.noise = g.get("noise", rc.noise);
    g.finish();
  } else {
    r.skip("render");
  }
  const int w = s.render.image_width, h = s.render.image_height;
  if (r.has("camera_ring")) {
    Reader g(r.raw("camera_ring"), "scene.camera_ring");
    const auto c = number_list(g.raw("center_m"), "scene.camera_ring.center_m", 2);
    const auto ring = camera_ring(g.req<int>("count"), {c[0], c[1]}, g.req<double>("radius_m"),
                                  g.req<double>("height_m"), g.req<double>("focal_px"),
                                  g.get("phase_deg", 0.0), w, h);
    g.finish();
    s.cameras.insert(s.cameras.end(), ring.begin(), ring.end());
  } else {
    r.skip("camera_ring");
  }
  if (r.has("cameras")) {
    const json& cams = r.raw("cameras");
    if (!cams.is_array()) throw ConfigError("scene.cameras: expected a list");
    for (std::size_t i = 0; i < cams.size(); ++i) {
      s.cameras.push_back(
          camera_from_json(cams[i], "scene.cameras[" + std::to_string(i) + "]", w, h));
    }
  } else {
    r.skip("cameras");
  }
  if (r.has("people")) {
    Reader g(r.raw("people"), "scene.people");
    s.people_min = g.get("min", s.people_min);
    s.people_max = g.get("max", s.people_max);
    s.min_separation_m = g.get("min_separation_m", s.min_separation_m);
    s.person_height_m = g.get("height_m", s.person_height_m);
    g.finish();
  } else {
    r.skip("people");
  }
  if (r.has("calib_noise")) {
    Reader g(r.raw("calib_noise"), "scene.calib_noise");
    CalibNoise n;
    n.rotation_deg_sigma = g.get("rotation_deg_sigma", 0.0);
    n.translation_m_sigma = g.get("translation_m_sigma", 0.0);
    g.finish();
    s.calib_noise = n;
  } else {
    r.skip("calib_noise");
  }
  if (r.has("occluders")) {
    const json& occ = r.raw("occluders");
    if (!occ.is_array()) throw ConfigError("scene.occluders: expected a list");
    for (std::size_t i = 0; i < occ.size(); ++i) {
      Reader g(occ[i], "scene.occluders[" + std::to_string(i) + "]");
      Occluder o;
      o.x_m = g.req<double>("x_m");
      o.y_m = g.req<double>("y_m");
      o.radius_m = g.get("radius_m", o.radius_m);
      o.height_m = g.get("height_m", o.height_m);
      o.intensity = g.get("intensity", o.intensity);
      g.finish();
      s.occluders.push_back(o);
    }
  } else {
    r.skip("occluders");
  }
  s.kernel_sigma_cells = r.get("kernel_sigma_cells", s.kernel_sigma_cells);
  r.finish();
  return s;
}

json to_json(const SceneConfig& s) {
  json cams = json::array();
  for (const auto& c : s.cameras) {
    cams.push_back({{"intrinsics", mat3_json(c.intrinsics)},
                    {"rotation", mat3_json(c.rotation)},
                    {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}}});
  }
  json occ = json::array();
  for (const auto& o : s.occluders) {
    occ.push_back({{"x_m", o.x_m}, {"y_m", o.y_m}, {"radius_m", o.radius_m},
                   {"height_m", o.height_m}, {"intensity", o.intensity}});
  }
  const RenderConfig& rc = s.render;
  json j = {
      {"grid",
       {{"width_cells", s.grid.width_cells},
        {"height_cells", s.grid.height_cells},
        {"cell_size_m", s.grid.cell_size_m},
        {"origin_m", {s.grid.origin_x_m, s.grid.origin_y_m}}}},
      {"render",
       {{"image_width", rc.image_width},
        {"image_height", rc.image_height},
        {"blob_base_radius_px", rc.blob_base_radius_px},
        {"reference_depth_m", rc.reference_depth_m},
        {"blob_aspect", rc.blob_aspect},
        {"person_intensity", rc.person_intensity},
        {"occlusion", rc.occlusion},
        {"noise", rc.noise}}},
      {"cameras", cams},
      {"people",
       {{"min", s.people_min},
        {"max", s.people_max},
        {"min_separation_m", s.min_separation_m},
        {"height_m", s.person_height_m}}},
      {"calib_noise", nullptr},
      {"occluders", occ},
      {"kernel_sigma_cells", s.kernel_sigma_cells}};
  if (s.calib_noise) {
    j["calib_noise"] = {{"rotation_deg_sigma", s.calib_noise->rotation_deg_sigma},
                        {"translation_m_sigma", s.calib_noise->translation_m_sigma}};
  }
  return j;
}

ModelConfig model_from_json(const json& j) {
  Reader r(j, "model");
  ModelConfig m;
  m.image_channels = r.get("image_channels", m.image_channels);
  m.extractor_channels = r.get("extractor_channels", m.extractor_channels);
  m.extractor_strides = r.get("extractor_strides", m.extractor_strides);
  m.decoder_view_channels = r.get("decoder_view_channels", m.decoder_view_channels);
  m.decoder_scene_channels = r.get("decoder_scene_channels", m.decoder_scene_channels);
  m.decoder_scene_dilations = r.get("decoder_scene_dilations", m.decoder_scene_dilations);
  m.weight_subnet_channels = r.get("weight_subnet_channels", m.weight_subnet_channels);
  m.sigma = r.get("sigma", m.sigma);
  m.lambda = r.get("lambda", m.lambda);
  m.fusion_mode = fusion_mode_from_string(r.get<std::string>("fusion_mode", to_string(m.fusion_mode)));
  m.weight_activation = weight_activation_from_string(
      r.get<std::string>("weight_activation", to_string(m.weight_activation)));
  m.weight_bias_init = r.get("weight_bias_init", m.weight_bias_init);
  m.weight_final_gain = r.get("weight_final_gain", m.weight_final_gain);
  r.finish();
  return m;
}

json to_json(const ModelConfig& m) {
  return {{"image_channels", m.image_channels},
          {"extractor_channels", m.extractor_channels},
          {"extractor_strides", m.extractor_strides},
          {"decoder_view_channels", m.decoder_view_channels},
          {"decoder_scene_channels", m.decoder_scene_channels},
          {"decoder_scene_dilations", m.decoder_scene_dilations},
          {"weight_subnet_channels", m.weight_subnet_channels},
          {"sigma", m.sigma},
          {"lambda", m.lambda},
          {"fusion_mode", to_string(m.fusion_mode)},
          {"weight_activation", to_string(m.weight_activation)},
          {"weight_bias_init", m.weight_bias_init},
          {"weight_final_gain", m.weight_final_gain}};
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  scene.seed = s;
  train.seed = derive_seed(s, 3);
  if (adapt) {
    adapt->adapt.seed = derive_seed(s, 4);
    adapt->target_scene.seed = derive_seed(s, 5);
  }
}

std::uint64_t ExperimentConfig::init_seed() const { return derive_seed(seed, 2); }
std::uint64_t ExperimentConfig::target_dataset_seed() const { return derive_seed(seed, 5); }

void ExperimentConfig::validate() const {
  scene.validate();
  model.validate();
  train.validate();
  const int n_views = static_cast<int>(scene.cameras.size());
  if (train.views_per_sample > n_views) {
    throw ConfigError("train.views_per_sample (" + std::to_string(train.views_per_sample) +
                      ") exceeds the number of cameras (" + std::to_string(n_views) + ")");
  }
  if (dataset.train_frames < 1) throw ConfigError("dataset.train_frames must be >= 1");
  if (dataset.val_frames < 0) throw ConfigError("dataset.val_frames must be >= 0");
  if (!dataset.path.empty() && !std::filesystem::is_directory(dataset.path)) {
    throw IoError("dataset.path does not exist: " + dataset.path);
  }
  if (!(eval.settings.t_cells > 0.0)) throw ConfigError("eval.t_cells must be > 0");
  if (!(eval.settings.threshold >= 0.0)) throw ConfigError("eval.threshold must be >= 0");
  if (eval.resamples < 1) throw ConfigError("eval.resamples must be >= 1");
  for (int k : eval.view_counts) {
    if (k < 1 || k > n_views) {
      throw ConfigError("eval.view_counts: " + std::to_string(k) + " is outside [1, " +
                        std::to_string(n_views) + "]");
    }
  }
  if (adapt) {
    adapt->adapt.validate();
    adapt->target_scene.validate();
    if (adapt->target_train_frames < 1 || adapt->target_test_frames < 1) {
      throw ConfigError("adapt: target_train_frames and target_test_frames must be >= 1");
    }
    if (!adapt->target_path.empty() && !std::filesystem::is_directory(adapt->target_path)) {
      throw IoError("adapt.target_path does not exist: " + adapt->target_path);
    }
  }
}

ExperimentConfig parse_experiment(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Reader r(j, "config");
  ExperimentConfig c;
  const auto seed = r.get<std::uint64_t>("seed", 1);
  c.output_dir = r.get<std::string>("output_dir", c.output_dir);
  c.scene = scene_from_json(r.raw("scene"));
  if (r.has("dataset")) {
    Reader d(r.raw("dataset"), "dataset");
    c.dataset.train_frames = d.get("train_frames", c.dataset.train_frames);
    c.dataset.val_frames = d.get("val_frames", c.dataset.val_frames);
    c.dataset.path = d.get<std::string>("path", c.dataset.path);
    d.finish();
  } else {
    r.skip("dataset");
  }
  if (r.has("model")) c.model = model_from_json(r.raw("model"));
  r.skip("model");
  if (r.has("train")) c.train = train_from_json(r.raw("train"));
  r.skip("train");
  if (r.has("adapt")) c.adapt = adapt_from_json(r.raw("adapt"), c.scene);
  r.skip("adapt");
  if (r.has("eval")) {
    Reader e(r.raw("eval"), "eval");
    c.eval.settings.threshold = e.get("threshold", c.eval.settings.threshold);
    c.eval.settings.nms_radius_cells = e.get("nms_radius_cells", c.eval.settings.nms_radius_cells);
    c.eval.preset = e.get<std::string>("preset", "");
    c.eval.settings.t_cells = e.get("t_cells", c.eval.settings.t_cells);
    if (e.has("t_m")) c.eval.settings.t_cells = e.req<double>("t_m") / c.scene.grid.cell_size_m;
    e.skip("t_m");
    if (!c.eval.preset.empty()) {
      const auto t_m = threshold_preset(c.eval.preset);
      if (!t_m) throw ConfigError("eval.preset: unknown preset '" + c.eval.preset + "'");
      const double t = *t_m / c.scene.grid.cell_size_m;
      if ((e.has("t_cells") && c.eval.settings.t_cells != t)) {
        throw ConfigError("eval: t_cells disagrees with preset '" + c.eval.preset + "'");
      }
      c.eval.settings.t_cells = t;
    }
    c.eval.view_counts = e.get("view_counts", c.eval.view_counts);
    c.eval.resamples = e.get("resamples", c.eval.resamples);
    e.finish();
  } else {
    r.skip("eval");
  }
  r.finish();
  c.set_seed(seed);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment(ss.str());
}

json to_json(const ExperimentConfig& c) {
  json j = {{"seed", c.seed},
            {"output_dir", c.output_dir},
            {"scene", to_json(c.scene)},
            {"dataset",
             {{"train_frames", c.dataset.train_frames},
              {"val_frames", c.dataset.val_frames},
              {"path", c.dataset.path}}},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"adapt", nullptr},
            {"eval",
             {{"threshold", c.eval.settings.threshold},
              {"nms_radius_cells", c.eval.settings.nms_radius_cells},
              {"t_cells", c.eval.settings.t_cells},
              {"preset", c.eval.preset},
              {"view_counts", c.eval.view_counts},
              {"resamples", c.eval.resamples}}}};
  if (c.adapt) j["adapt"] = to_json(*c.adapt);
  return j;
}

std::string serialize(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// The output location does not change any result, so it is left out.
std::string config_hash(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}
std::string model_hash(const ModelConfig& m) { return fnv1a_hex(to_json(m).dump()); }

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const ModelConfig& model, const std::string& experiment_hash) {
  Archive a;
  a.meta = {{"kind", "model"},
            {"model", to_json(model)},
            {"model_hash", model_hash(model)},
            {"config_hash", experiment_hash}};
  a.arrays = params.blocks();
  write_archive(path, a);
}

ParamSet load_checkpoint(const std::filesystem::path& path, const ModelConfig& model) {
  const Archive a = read_archive(path);
  if (!a.meta.contains("model_hash") || !a.meta["model_hash"].is_string()) {
    throw CheckpointMismatch(path.string() + ": not a model checkpoint");
  }
  const std::string want = model_hash(model);
  const std::string got = a.meta["model_hash"].get<std::string>();
  if (got != want) {
    throw CheckpointMismatch(path.string() + ": model configuration hash " + got +
                             " does not match the current configuration (" + want + ")");
  }
  ParamSet p = to_param_set(a);
  const ParamSet expected = init_model_params(model, 0);
  for (const auto& b : expected.blocks()) {
    if (!p.contains(b.name) || p.at(b.name).shape != b.shape) {
      throw CheckpointMismatch(path.string() + ": parameter '" + b.name +
                               "' missing or misshaped");
    }
  }
  return p;
}

}  // namespace viewfuse
