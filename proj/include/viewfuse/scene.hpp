#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "viewfuse/geometry.hpp"

namespace viewfuse {

// Row-major 2-D array of doubles; ground-plane maps use [height_cells,
// width_cells].
struct Array2 {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  static Array2 zeros(int rows, int cols) {
    return {rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0)};
  }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  // [1, rows, cols] constant tensor.
  Tensor as_tensor() const;
  bool operator==(const Array2&) const = default;
};

// Single-channel image with values in [0, 1], pixel centres at integers.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  Tensor as_tensor() const;
  bool operator==(const Image&) const = default;
};

// Vertical cylinder standing on the ground that hides whatever is behind it.
struct Occluder {
  double x_m = 0.0;
  double y_m = 0.0;
  double radius_m = 0.5;
  double height_m = 2.0;
  double intensity = 0.5;
  bool operator==(const Occluder&) const = default;
};

struct RenderConfig {
  int image_width = 96;
  int image_height = 72;
  double blob_base_radius_px = 3.0;
  // Depth at which a blob has exactly the base radius.
  double reference_depth_m = 10.0;
  // Vertical semi-axis = aspect * horizontal semi-axis.
  double blob_aspect = 2.0;
  double person_intensity = 1.0;
  bool occlusion = true;
  // Additive per-pixel noise drawn uniformly from [-noise, noise].
  double noise = 0.05;
  bool operator==(const RenderConfig&) const = default;
};

struct CalibNoise {
  double rotation_deg_sigma = 0.0;
  double translation_m_sigma = 0.0;
  bool operator==(const CalibNoise&) const = default;
};

struct SceneConfig {
  GroundGrid grid;
  std::vector<CameraModel> cameras;
  int people_min = 5;
  int people_max = 15;
  double min_separation_m = 1.0;
  double person_height_m = 1.7;
  RenderConfig render;
  std::optional<CalibNoise> calib_noise;
  std::vector<Occluder> occluders;
  double kernel_sigma_cells = 2.0;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const SceneConfig&) const = default;
};

struct MultiViewFrame {
  std::vector<Image> images;
  std::vector<Point2> people_world;
  Array2 scene_gt;
  std::vector<Array2> view_gts;
  std::vector<FovMask> masks;
};

// Result of rendering one view; attribution holds, per pixel, the index of
// the person painted last there, kOccluderPixel, or kBackgroundPixel.
struct RenderedView {
  Image image;
  std::vector<int> attribution;
  static constexpr int kBackgroundPixel = -1;
  static constexpr int kOccluderPixel = -2;
};

struct Dataset {
  SceneConfig scene;
  // Cameras used for rendering and ground truth.
  std::vector<CameraModel> render_cameras;
  // Cameras the model projects with; differ from render_cameras only by
  // calibration noise.
  std::vector<CameraModel> model_cameras;
  std::vector<MultiViewFrame> frames;
  std::uint64_t seed = 0;
};

using Rng = std::mt19937_64;

// Sub-seed for stream k of a base seed: splitmix64(seed + golden * (k + 1)).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
// Stream reserved for the model-side calibration perturbation.
inline constexpr std::uint64_t kCalibrationStream = 0xCA11B000ull;

// Portable draws (std distributions are implementation-defined).
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
int uniform_int(Rng& rng, int lo, int hi);  // inclusive
double normal(Rng& rng);

std::vector<Point2> sample_people(const SceneConfig& cfg, Rng& rng);

// Sum of unit-peak Gaussians (truncated at 4 sigma) at each person's cell
// position. People outside the grid are skipped with a warning; their count
// is stored in *skipped when given.
Array2 make_scene_gt(const std::vector<Point2>& people_world,
                     const GroundGrid& grid, double kernel_sigma_cells,
                     int* skipped = nullptr);

RenderedView render_view(const std::vector<Point2>& people_world,
                         const CameraModel& cam, const SceneConfig& cfg,
                         Rng* noise_rng);

// Per-view image-plane people density at feature resolution: the fraction of
// each stride x stride block attributed to people in a noise-free render.
Array2 person_density(const std::vector<Point2>& people_world,
                      const CameraModel& cam, const SceneConfig& cfg,
                      int stride);

CameraModel perturb_camera(const CameraModel& cam, const CalibNoise& noise,
                           Rng& rng);

// Builds masks, scene_gt and view_gts (scene_gt times mask) for the given
// images and people.
MultiViewFrame assemble_frame(std::vector<Image> images,
                              std::vector<Point2> people_world,
                              const std::vector<FovMask>& masks,
                              const GroundGrid& grid, double kernel_sigma_cells);

MultiViewFrame generate_frame(const SceneConfig& cfg,
                              const std::vector<FovMask>& masks, Rng& rng);

// Deterministic in (cfg, seed); frame k draws from derive_seed(seed, k).
Dataset generate_dataset(const SceneConfig& cfg, int n_frames,
                         std::uint64_t seed, int workers = 1);

std::vector<FovMask> camera_masks(const std::vector<CameraModel>& cams,
                                  const GroundGrid& grid);

}  // namespace viewfuse
