#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "viewfuse/archive.hpp"
#include "viewfuse/dataset_io.hpp"

using namespace viewfuse;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "viewfuse_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), {}};
}

struct CliRun {
  int code = -1;
  std::string err;
};

CliRun cli(const std::string& args) {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string("\"") + VIEWFUSE_CLI_PATH + "\" " + args + " >/dev/null 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

// Nine cameras, tiny images and model, a handful of frames.
nlohmann::json nine_camera_config() {
  return nlohmann::json::parse(R"({
    "seed": 3,
    "scene": {
      "grid": {"width_cells": 16, "height_cells": 16, "cell_size_m": 0.5, "origin_m": [0, 0]},
      "render": {"image_width": 32, "image_height": 24, "noise": 0.05},
      "camera_ring": {"count": 9, "center_m": [4, 4], "radius_m": 9, "height_m": 6,
                      "focal_px": 25, "phase_deg": 5},
      "people": {"min": 2, "max": 5, "min_separation_m": 1.0},
      "kernel_sigma_cells": 1.0
    },
    "dataset": {"train_frames": 4, "val_frames": 2},
    "model": {"extractor_channels": [4, 4], "extractor_strides": [1, 1],
              "decoder_view_channels": [4, 1], "decoder_scene_channels": [4, 1],
              "decoder_scene_dilations": [1, 1], "weight_subnet_channels": [4, 4, 4, 1]},
    "train": {"epochs": {"stage1": 1, "stage2": 1, "stage3": 1},
              "views_per_sample": 3,
              "optimizer": {"kind": "adam", "learning_rate": 1e-3}},
    "eval": {"t_cells": 2, "view_counts": [3, 5, 7, 9]}
  })");
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
  const fs::path p = work_dir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

// Trains the nine-camera model once and shares the output directory.
const fs::path& trained_dir() {
  static const fs::path out = [] {
    const fs::path cfg = write_config("nine.json", nine_camera_config());
    const fs::path o = work_dir() / "nine_out";
    const CliRun r = cli("--config \"" + cfg.string() + "\" --out \"" + o.string() + "\" train");
    EXPECT_EQ(r.code, 0) << r.err;
    return o;
  }();
  return out;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("train").code, 2);  // no --config
  EXPECT_EQ(cli("--bogus-flag train").code, 2);
  nlohmann::json j = nine_camera_config();
  j["model"]["not_a_key"] = 1;
  const CliRun r = cli("--config \"" + write_config("bad.json", j).string() + "\" train");
  EXPECT_EQ(r.code, 2);
  const auto err = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(err["exit_code"], 2);
  EXPECT_TRUE(err.contains("message"));
}

TEST(Cli, MissingFilesExitThree) {
  EXPECT_EQ(cli("--config /nonexistent/cfg.json train").code, 3);
  EXPECT_EQ(cli("--out \"" + (work_dir() / "r").string() + "\" render --input /nonexistent.vwf").code, 3);
}

TEST(Cli, DivergenceExitsFour) {
  nlohmann::json j = nine_camera_config();
  j["train"]["optimizer"] = {{"kind", "sgd-momentum"}, {"learning_rate", 1e6}};
  j["train"]["stages"] = {3};
  const fs::path cfg = write_config("diverge.json", j);
  const CliRun r = cli("--config \"" + cfg.string() + "\" --out \"" + (work_dir() / "div").string() + "\" train");
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST(Cli, CheckpointMismatchExitsFive) {
  const fs::path ckpt = trained_dir() / "checkpoint.vwf";
  ASSERT_TRUE(fs::exists(ckpt));
  nlohmann::json j = nine_camera_config();
  j["model"]["decoder_view_channels"] = {6, 1};
  const fs::path cfg = write_config("other_model.json", j);
  const CliRun r = cli("--config \"" + cfg.string() + "\" --out \"" + (work_dir() / "mm").string() +
                    "\" eval --checkpoint \"" + ckpt.string() + "\"");
  EXPECT_EQ(r.code, 5) << r.err;
}

TEST(Cli, TrainWritesProvenanceAndLosses) {
  const fs::path& out = trained_dir();
  for (const char* f : {"config.json", "run.txt", "loss.csv", "checkpoint.vwf", "validation.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const std::string loss = slurp(out / "loss.csv");
  EXPECT_NE(loss.find("config_hash"), std::string::npos);
}

TEST(Cli, ViewCountSweepHasOneRowPerCount) {
  const fs::path cfg = work_dir() / "nine.json";
  const fs::path ckpt = trained_dir() / "checkpoint.vwf";
  const fs::path out = work_dir() / "sweep";
  const CliRun r = cli("--config \"" + cfg.string() + "\" --out \"" + out.string() +
                    "\" eval --checkpoint \"" + ckpt.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(slurp(out / "sweep.csv"));
  std::string line;
  std::vector<int> views;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("views", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 10u) << line;
    views.push_back(std::stoi(cells[0]));
    if (cells[5] != "undefined") EXPECT_LE(std::stod(cells[5]), 1.0);  // moda
    for (int k : {6, 7, 8, 9}) {
      if (cells[k] == "undefined") continue;
      EXPECT_GE(std::stod(cells[k]), 0.0);
      EXPECT_LE(std::stod(cells[k]), 1.0);
    }
  }
  EXPECT_EQ(views, (std::vector<int>{3, 5, 7, 9}));
  EXPECT_EQ(cli("--config \"" + cfg.string() + "\" --out \"" + out.string() +
                "\" eval --checkpoint \"" + ckpt.string() + "\" --view-counts 10").code,
            2);
}

TEST(Cli, ZeroMapRendersBlack) {
  Archive ar;
  ar.arrays.push_back({"zeros", {4, 6}, std::vector<double>(24, 0.0)});
  ar.arrays.push_back({"stack", {2, 3, 3}, std::vector<double>(18, 1.0)});
  const fs::path in = work_dir() / "maps.vwf";
  write_archive(in, ar);
  const fs::path out = work_dir() / "render";
  ASSERT_EQ(cli("--out \"" + out.string() + "\" render --input \"" + in.string() + "\"").code, 0);
  const Image black = read_pgm(out / "zeros.pgm");
  EXPECT_EQ(black.width, 6);
  EXPECT_EQ(black.height, 4);
  for (double v : black.data) EXPECT_EQ(v, 0.0);
  for (double v : read_pgm(out / "stack_c1.pgm").data) EXPECT_EQ(v, 1.0);
}

TEST(Cli, GradcheckPasses) {
  const CliRun r = cli("--out \"" + (work_dir() / "gc").string() + "\" gradcheck");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(work_dir() / "gc" / "gradcheck.csv"));
}
