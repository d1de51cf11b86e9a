#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "viewfuse/tensor.hpp"

namespace viewfuse {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

// Raster over the ground plane z = 0. Integer cell coordinates are cell
// centres; cell (0,0) sits at origin. Maps are stored [height_cells,
// width_cells] with x along columns.
struct GroundGrid {
  int width_cells = 0;
  int height_cells = 0;
  double cell_size_m = 0.1;
  double origin_x_m = 0.0;
  double origin_y_m = 0.0;

  void validate() const;
  Point2 cell_to_world(Point2 cell) const;
  Point2 world_to_cell(Point2 world) const;
  // True when the cell coordinate rounds to a cell of the grid.
  bool contains_cell(Point2 cell) const;
  std::size_t cell_count() const {
    return static_cast<std::size_t>(width_cells) * height_cells;
  }
  // Maps cell coordinates to metres on the plane (homogeneous 2-D).
  Mat3 cell_to_world_affine() const;
  bool operator==(const GroundGrid&) const = default;
};

// Pinhole camera: X_cam = rotation * X_world + translation.
struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int image_width = 0;
  int image_height = 0;

  // Throws ConfigError when rotation is not orthonormal, focal lengths are
  // not positive, skew is nonzero, or the centre lies on z = 0.
  void validate() const;
  Vec3 center() const;
  // Camera-frame depth and pixel of a world point; nullopt when depth <= 0.
  std::optional<Point2> project(const Vec3& world, double* depth = nullptr) const;
  bool in_image(Point2 px) const;
  bool operator==(const CameraModel& o) const;
};

// Camera at position looking at target with world +z as up.
CameraModel look_at(const Vec3& position, const Vec3& target, double focal_px,
                    int image_width, int image_height);

class FovMask {
 public:
  FovMask() = default;
  FovMask(GroundGrid grid, std::vector<std::uint8_t> mask);

  const GroundGrid& grid() const { return grid_; }
  const std::vector<std::uint8_t>& values() const { return mask_; }
  bool at(int row, int col) const {
    return mask_[static_cast<std::size_t>(row) * grid_.width_cells + col] != 0;
  }
  double visible_fraction() const;
  // Clears every visible cell with an invisible 8-neighbour inside the grid.
  FovMask eroded() const;
  // [1, height_cells, width_cells] constant tensor of 0/1 values.
  Tensor as_tensor() const;
  bool operator==(const FovMask&) const = default;

 private:
  GroundGrid grid_;
  std::vector<std::uint8_t> mask_;
};

// Maps cell coordinates (homogeneous) to image pixels:
// K [r1 r2 t] * cell_to_world_affine.
Mat3 ground_to_image_homography(const CameraModel& cam, const GroundGrid& grid);

// Visible = cell centre has positive depth and projects inside the image.
FovMask fov_mask(const CameraModel& cam, const GroundGrid& grid);

// Per-cell sampling coordinates into a feature map of feature_h x feature_w
// whose pixels are image pixels / stride. Invisible cells get an
// out-of-range coordinate so they sample to zero. Shape [H_cells, W_cells, 2].
Tensor projection_grid(const CameraModel& cam, const GroundGrid& grid,
                       int feature_h, int feature_w, int feature_stride);

// Samples view_map [C,H_f,W_f] at every ground cell. Throws ShapeError when
// the stride disagrees with the camera image size and feature shape.
Tensor project_to_ground(const Tensor& view_map, const CameraModel& cam,
                         const GroundGrid& grid, int feature_stride);

// Feature-map size produced from an image by a given total stride.
int strided_size(int image_size, int stride);

}  // namespace viewfuse
