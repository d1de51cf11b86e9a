#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "viewfuse/archive.hpp"
#include "viewfuse/config.hpp"
#include "viewfuse/dataset_io.hpp"
#include "viewfuse/error.hpp"
#include "viewfuse/optim.hpp"

using namespace viewfuse;
namespace fs = std::filesystem;

namespace {

// Fresh directory per test, removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path = fs::temp_directory_path() /
           (std::string("viewfuse_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SceneConfig io_scene() {
  SceneConfig s;
  s.grid = {16, 12, 0.5, 0.0, 0.0};
  s.cameras = camera_ring(3, {4, 3}, 9, 6, 45, 12, 48, 36);
  s.render.image_width = 48;
  s.render.image_height = 36;
  s.occluders.push_back({4.0, 3.0, 0.6, 2.0, 0.3});
  s.calib_noise = CalibNoise{1.0, 0.05};
  s.people_min = 2;
  s.people_max = 5;
  return s;
}

}  // namespace

TEST(Pgm, QuantizationRule) {
  EXPECT_EQ(quantize_pixel(-0.3), 0);
  EXPECT_EQ(quantize_pixel(0.0), 0);
  EXPECT_EQ(quantize_pixel(1.0), 255);
  EXPECT_EQ(quantize_pixel(7.0), 255);
  EXPECT_EQ(quantize_pixel(0.5), 128);  // 127.5 rounds away from zero
  EXPECT_EQ(quantize_pixel(100.0 / 255.0), 100);
}

TEST(Pgm, RoundTripIsExactOnQuantizedValues) {
  TempDir tmp;
  Image img{5, 3, {}};
  for (int i = 0; i < 15; ++i) img.data.push_back((i * 17 % 256) / 255.0);
  write_pgm(tmp.path / "a.pgm", img);
  const Image back = read_pgm(tmp.path / "a.pgm");
  ASSERT_EQ(back.width, 5);
  ASSERT_EQ(back.height, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_DOUBLE_EQ(back.data[i], img.data[i]);
}

TEST(Pgm, MalformedFilesRaiseIoError) {
  TempDir tmp;
  EXPECT_THROW(read_pgm(tmp.path / "missing.pgm"), IoError);
  {
    std::ofstream os(tmp.path / "ascii.pgm");
    os << "P2\n2 2\n255\n0 0 0 0\n";
  }
  EXPECT_THROW(read_pgm(tmp.path / "ascii.pgm"), IoError);
  {
    std::ofstream os(tmp.path / "short.pgm", std::ios::binary);
    os << "P5\n4 4\n255\n" << std::string(5, '\0');
  }
  EXPECT_THROW(read_pgm(tmp.path / "short.pgm"), IoError);
}

TEST(DatasetIo, FormatRealRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345.678, 1e300}) {
    EXPECT_EQ(std::stod(format_real(v)), v);
  }
}

TEST(DatasetIo, CalibrationRoundTripsExactly) {
  TempDir tmp;
  const Dataset ds = generate_dataset(io_scene(), 1, 4, 1);
  write_calibration(tmp.path / "calibration.txt", ds);
  const Dataset back = read_calibration(tmp.path / "calibration.txt");
  EXPECT_EQ(back.render_cameras, ds.render_cameras);
  EXPECT_EQ(back.model_cameras, ds.model_cameras);
  EXPECT_EQ(back.scene.grid, ds.scene.grid);
  EXPECT_EQ(back.scene.occluders, ds.scene.occluders);
  EXPECT_EQ(back.scene.kernel_sigma_cells, ds.scene.kernel_sigma_cells);
  EXPECT_TRUE(back.frames.empty());
}

TEST(DatasetIo, UnknownCalibrationVersionIsRejected) {
  TempDir tmp;
  const Dataset ds = generate_dataset(io_scene(), 1, 4, 1);
  write_calibration(tmp.path / "calibration.txt", ds);
  std::ifstream is(tmp.path / "calibration.txt");
  std::string text((std::istreambuf_iterator<char>(is)), {});
  const auto at = text.find("format_version = 1");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 18, "format_version = 9");
  std::ofstream(tmp.path / "calibration.txt") << text;
  EXPECT_ANY_THROW(read_calibration(tmp.path / "calibration.txt"));
}

TEST(DatasetIo, ExportThenLoadReproducesFrames) {
  TempDir tmp;
  const Dataset ds = generate_dataset(io_scene(), 3, 11, 1);
  export_dataset(ds, tmp.path / "d");
  EXPECT_TRUE(fs::exists(tmp.path / "d" / "frames" / "000002" / "view1.pgm"));
  const Dataset back = load_external_dataset(tmp.path / "d");
  ASSERT_EQ(back.frames.size(), 3u);
  for (std::size_t f = 0; f < 3; ++f) {
    const auto& a = ds.frames[f];
    const auto& b = back.frames[f];
    EXPECT_EQ(b.people_world, a.people_world);
    ASSERT_EQ(b.images.size(), a.images.size());
    for (std::size_t v = 0; v < a.images.size(); ++v) {
      for (std::size_t i = 0; i < a.images[v].data.size(); ++i) {
        EXPECT_DOUBLE_EQ(b.images[v].data[i], quantize_pixel(a.images[v].data[i]) / 255.0);
      }
    }
    for (std::size_t i = 0; i < a.scene_gt.data.size(); ++i)
      EXPECT_NEAR(b.scene_gt.data[i], a.scene_gt.data[i], 1e-12);
  }
}

TEST(DatasetIo, MissingPiecesRaiseIoError) {
  TempDir tmp;
  EXPECT_THROW(load_external_dataset(tmp.path / "nothing"), IoError);
  const Dataset ds = generate_dataset(io_scene(), 1, 11, 1);
  export_dataset(ds, tmp.path / "d");
  fs::remove(tmp.path / "d" / "frames" / "000000" / "view2.pgm");
  EXPECT_THROW(load_external_dataset(tmp.path / "d"), IoError);
}

TEST(Archive, RoundTripsBlocksAndMeta) {
  TempDir tmp;
  Archive a;
  a.meta["note"] = "x";
  a.arrays.push_back({"w", {2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7}});
  a.arrays.push_back({"b", {1}, {0.25}});
  write_archive(tmp.path / "a.vwf", a);
  const Archive back = read_archive(tmp.path / "a.vwf");
  EXPECT_EQ(back.meta, a.meta);
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_EQ(back.arrays[0].name, "w");
  EXPECT_EQ(back.arrays[0].shape, (Shape{2, 3}));
  EXPECT_EQ(back.arrays[0].values, a.arrays[0].values);
  EXPECT_TRUE(std::signbit(back.arrays[0].values[4]));
  EXPECT_EQ(to_param_set(back).at("b").values, std::vector<double>{0.25});
}

TEST(Archive, TruncatedFileRaisesIoError) {
  TempDir tmp;
  Archive a;
  a.arrays.push_back({"w", {4}, {1, 2, 3, 4}});
  write_archive(tmp.path / "a.vwf", a);
  fs::resize_file(tmp.path / "a.vwf", fs::file_size(tmp.path / "a.vwf") - 5);
  EXPECT_THROW(read_archive(tmp.path / "a.vwf"), IoError);
  std::ofstream(tmp.path / "junk.vwf") << "not an archive";
  EXPECT_THROW(read_archive(tmp.path / "junk.vwf"), IoError);
}

TEST(Config, ShippedConfigsRoundTrip) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(VIEWFUSE_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    const ExperimentConfig cfg = load_experiment(entry.path());
    EXPECT_NO_THROW(cfg.validate()) << entry.path();
    const ExperimentConfig back = parse_experiment(serialize(cfg));
    EXPECT_EQ(back, cfg) << entry.path();
    EXPECT_EQ(serialize(back), serialize(cfg));
  }
  EXPECT_GE(seen, 4);
}

TEST(Config, UnknownKeysAndBadValuesAreErrors) {
  EXPECT_THROW(parse_experiment(R"({"seed": 1, "bogus": 2})"), ConfigError);
  EXPECT_THROW(parse_experiment(R"({"seed": 1, "model": {"sigmaa": 1}})"), ConfigError);
  EXPECT_THROW(parse_experiment("{ not json"), ConfigError);
  const ExperimentConfig base = load_experiment(fs::path(VIEWFUSE_CONFIG_DIR) / "toy.json");
  nlohmann::json j = to_json(base);
  j["model"]["sigma"] = -1.0;
  EXPECT_THROW(parse_experiment(j.dump()).validate(), ConfigError);
}

TEST(Config, CommentsAreAccepted) {
  const ExperimentConfig base = load_experiment(fs::path(VIEWFUSE_CONFIG_DIR) / "toy.json");
  std::string text = serialize(base);
  text.insert(1, "\n// leading note\n/* block */\n");
  EXPECT_EQ(parse_experiment(text), base);
}

TEST(Config, HashIgnoresOutputDirButTracksContent) {
  ExperimentConfig a = load_experiment(fs::path(VIEWFUSE_CONFIG_DIR) / "toy.json");
  ExperimentConfig b = a;
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.set_seed(a.seed + 1);
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  // FNV-1a 64 reference values.
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Config, CheckpointRoundTripAndMismatch) {
  TempDir tmp;
  ModelConfig m;
  m.extractor_channels = {4, 4};
  m.extractor_strides = {1, 1};
  const ParamSet p = init_model_params(m, 3);
  save_checkpoint(tmp.path / "c.vwf", p, m, "h");
  EXPECT_EQ(load_checkpoint(tmp.path / "c.vwf", m), p);
  ModelConfig other = m;
  other.decoder_view_channels = {8, 1};
  EXPECT_THROW(load_checkpoint(tmp.path / "c.vwf", other), CheckpointMismatch);
  EXPECT_THROW(load_checkpoint(tmp.path / "missing.vwf", m), IoError);
}

TEST(Config, SeedDerivationIsDistinct) {
  ExperimentConfig a;
  a.set_seed(5);
  EXPECT_EQ(a.dataset_seed(), 5u);
  EXPECT_NE(a.init_seed(), a.dataset_seed());
  EXPECT_NE(a.target_dataset_seed(), a.dataset_seed());
  ExperimentConfig b;
  b.set_seed(6);
  EXPECT_NE(a.init_seed(), b.init_seed());
}

TEST(Optimizer, SgdMomentumMatchesHandComputation) {
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kSgdMomentum;
  oc.learning_rate = 0.1;
  oc.momentum = 0.5;
  Optimizer opt(oc);
  ParamSet p;
  p.add("x", {2}, {1.0, -1.0});
  p.add("frozen", {1}, {3.0});
  opt.step(p, {{"x", {2.0, 4.0}}});
  // v = g; x -= lr v
  EXPECT_NEAR(p.at("x").values[0], 0.8, 1e-15);
  EXPECT_NEAR(p.at("x").values[1], -1.4, 1e-15);
  opt.step(p, {{"x", {2.0, 4.0}}});
  // v = 0.5 v + g = 1.5 g
  EXPECT_NEAR(p.at("x").values[0], 0.8 - 0.3, 1e-15);
  EXPECT_NEAR(p.at("x").values[1], -1.4 - 0.6, 1e-15);
  EXPECT_EQ(p.at("frozen").values[0], 3.0);
  EXPECT_EQ(opt.step_count(), 2);
}

TEST(Optimizer, AdamMatchesHandComputation) {
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdam;
  oc.learning_rate = 0.01;
  Optimizer opt(oc);
  ParamSet p;
  p.add("x", {1}, {0.5});
  const std::vector<double> gs{0.3, -0.2, 0.7};
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    const double g = gs[t - 1];
    opt.step(p, {{"x", {g}}});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.at("x").values[0], x, 1e-14) << t;
  }
}

TEST(Optimizer, MilestonesDecayLearningRate) {
  OptimizerConfig oc;
  oc.learning_rate = 1.0;
  oc.milestones = {2, 4};
  oc.decay = 0.5;
  Optimizer opt(oc);
  ParamSet p;
  p.add("x", {1}, {0.0});
  std::vector<double> lrs;
  for (int i = 0; i < 5; ++i) {
    lrs.push_back(opt.learning_rate());
    opt.step(p, {{"x", {0.0}}});
  }
  EXPECT_EQ(lrs, (std::vector<double>{1.0, 1.0, 0.5, 0.5, 0.25}));
}
