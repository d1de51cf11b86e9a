#include "viewfuse/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <iostream>
#include <string>

#include "viewfuse/error.hpp"
#include "viewfuse/log.hpp"
#include "viewfuse/ops.hpp"

namespace viewfuse {

void GroundGrid::validate() const {
  if (width_cells <= 0 || height_cells <= 0) {
    throw ConfigError("grid: width_cells and height_cells must be positive");
  }
  if (!(cell_size_m > 0.0)) throw ConfigError("grid: cell_size_m must be > 0");
}

Point2 GroundGrid::cell_to_world(Point2 cell) const {
  return {origin_x_m + cell.x * cell_size_m, origin_y_m + cell.y * cell_size_m};
}

Point2 GroundGrid::world_to_cell(Point2 world) const {
  return {(world.x - origin_x_m) / cell_size_m,
          (world.y - origin_y_m) / cell_size_m};
}

bool GroundGrid::contains_cell(Point2 cell) const {
  return cell.x >= -0.5 && cell.x < width_cells - 0.5 && cell.y >= -0.5 &&
         cell.y < height_cells - 0.5;
}

Mat3 GroundGrid::cell_to_world_affine() const {
  Mat3 a;
  a << cell_size_m, 0.0, origin_x_m, 0.0, cell_size_m, origin_y_m, 0.0, 0.0, 1.0;
  return a;
}

void CameraModel::validate() const {
  if (image_width <= 0 || image_height <= 0) {
    throw ConfigError("camera: image size must be positive");
  }
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0)) {
    throw ConfigError("camera: fx and fy must be positive");
  }
  if (intrinsics(0, 1) != 0.0 || intrinsics(1, 0) != 0.0 ||
      intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 ||
      intrinsics(2, 2) != 1.0) {
    throw ConfigError("camera: intrinsics must be [fx 0 cx; 0 fy cy; 0 0 1]");
  }
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  if (!(err < 1e-9)) {
    throw ConfigError("camera: rotation is not orthonormal (residual " +
                      std::to_string(err) + ")");
  }
  if (!translation.allFinite()) throw ConfigError("camera: translation not finite");
  if (std::abs(center().z()) < 1e-12) {
    throw ConfigError("camera: centre lies on the ground plane");
  }
}

Vec3 CameraModel::center() const { return -rotation.transpose() * translation; }

std::optional<Point2> CameraModel::project(const Vec3& world,
                                           double* depth) const {
  const Vec3 cam = rotation * world + translation;
  if (depth) *depth = cam.z();
  if (!(cam.z() > 0.0)) return std::nullopt;
  const Vec3 px = intrinsics * cam;
  return Point2{px.x() / px.z(), px.y() / px.z()};
}

bool CameraModel::in_image(Point2 px) const {
  return px.x >= 0.0 && px.x <= image_width - 1 && px.y >= 0.0 &&
         px.y <= image_height - 1;
}

bool CameraModel::operator==(const CameraModel& o) const {
  return intrinsics == o.intrinsics && rotation == o.rotation &&
         translation == o.translation && image_width == o.image_width &&
         image_height == o.image_height;
}

CameraModel look_at(const Vec3& position, const Vec3& target, double focal_px,
                    int image_width, int image_height) {
  const Vec3 z = (target - position).normalized();
  Vec3 up(0.0, 0.0, 1.0);
  if (std::abs(z.dot(up)) > 1.0 - 1e-9) up = Vec3(0.0, 1.0, 0.0);
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  CameraModel cam;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * position;
  cam.intrinsics << focal_px, 0.0, (image_width - 1) / 2.0, 0.0, focal_px,
      (image_height - 1) / 2.0, 0.0, 0.0, 1.0;
  cam.image_width = image_width;
  cam.image_height = image_height;
  return cam;
}

FovMask::FovMask(GroundGrid grid, std::vector<std::uint8_t> mask)
    : grid_(grid), mask_(std::move(mask)) {
  if (mask_.size() != grid_.cell_count()) {
    throw ShapeError("fov mask has " + std::to_string(mask_.size()) +
                     " cells, grid has " + std::to_string(grid_.cell_count()));
  }
}

double FovMask::visible_fraction() const {
  if (mask_.empty()) return 0.0;
  std::size_t n = 0;
  for (auto m : mask_) n += m;
  return static_cast<double>(n) / static_cast<double>(mask_.size());
}

FovMask FovMask::eroded() const {
  const int w = grid_.width_cells, h = grid_.height_cells;
  std::vector<std::uint8_t> out(mask_);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!at(r, c)) continue;
      bool keep = true;
      for (int dr = -1; dr <= 1 && keep; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (!at(rr, cc)) {
            keep = false;
            break;
          }
        }
      }
      out[static_cast<std::size_t>(r) * w + c] = keep ? 1 : 0;
    }
  }
  return FovMask(grid_, std::move(out));
}

Tensor FovMask::as_tensor() const {
  std::vector<double> v(mask_.begin(), mask_.end());
  return Tensor::from({1, grid_.height_cells, grid_.width_cells}, std::move(v));
}

Mat3 ground_to_image_homography(const CameraModel& cam, const GroundGrid& grid) {
  Mat3 ext;
  ext.col(0) = cam.rotation.col(0);
  ext.col(1) = cam.rotation.col(1);
  ext.col(2) = cam.translation;
  const Mat3 h = cam.intrinsics * ext * grid.cell_to_world_affine();
  const double det = h.determinant();
  const double scale = h.cwiseAbs().maxCoeff();
  if (!std::isfinite(det) || std::abs(det) <= 1e-12 * scale * scale * scale) {
    throw ConfigError("homography is singular (camera centre on the ground plane)");
  }
  return h;
}

FovMask fov_mask(const CameraModel& cam, const GroundGrid& grid) {
  const Mat3 h = ground_to_image_homography(cam, grid);
  std::vector<std::uint8_t> m(grid.cell_count(), 0);
  for (int r = 0; r < grid.height_cells; ++r) {
    for (int c = 0; c < grid.width_cells; ++c) {
      const Vec3 p = h * Vec3(c, r, 1.0);
      // Third homogeneous coordinate equals camera-frame depth.
      if (!(p.z() > 0.0)) continue;
      if (cam.in_image({p.x() / p.z(), p.y() / p.z()})) {
        m[static_cast<std::size_t>(r) * grid.width_cells + c] = 1;
      }
    }
  }
  FovMask mask(grid, std::move(m));
  if (mask.visible_fraction() == 0.0) {
    log_warning("field-of-view mask is empty: camera sees no ground cell");
  }
  return mask;
}

int strided_size(int image_size, int stride) {
  return (image_size + stride - 1) / stride;
}

Tensor projection_grid(const CameraModel& cam, const GroundGrid& grid,
                       int feature_h, int feature_w, int feature_stride) {
  if (feature_stride < 1) throw ShapeError("feature_stride must be >= 1");
  if (strided_size(cam.image_width, feature_stride) != feature_w) {
    throw ShapeError("feature width (dim 2) " + std::to_string(feature_w) +
                     " inconsistent with image width " +
                     std::to_string(cam.image_width) + " at stride " +
                     std::to_string(feature_stride));
  }
  if (strided_size(cam.image_height, feature_stride) != feature_h) {
    throw ShapeError("feature height (dim 1) " + std::to_string(feature_h) +
                     " inconsistent with image height " +
                     std::to_string(cam.image_height) + " at stride " +
                     std::to_string(feature_stride));
  }
  const Mat3 h = ground_to_image_homography(cam, grid);
  constexpr double kOutside = -1e6;
  std::vector<double> g(grid.cell_count() * 2, kOutside);
  for (int r = 0; r < grid.height_cells; ++r) {
    for (int c = 0; c < grid.width_cells; ++c) {
      const Vec3 p = h * Vec3(c, r, 1.0);
      if (!(p.z() > 0.0)) continue;
      const Point2 px{p.x() / p.z(), p.y() / p.z()};
      if (!cam.in_image(px)) continue;
      const std::size_t o = static_cast<std::size_t>(r) * grid.width_cells + c;
      g[2 * o] = px.x / feature_stride;
      g[2 * o + 1] = px.y / feature_stride;
    }
  }
  return Tensor::from({grid.height_cells, grid.width_cells, 2}, std::move(g));
}

Tensor project_to_ground(const Tensor& view_map, const CameraModel& cam,
                         const GroundGrid& grid, int feature_stride) {
  if (view_map.rank() != 3) {
    throw ShapeError("project_to_ground: view map must be [C,H,W], got " +
                     shape_str(view_map.shape()));
  }
  const Tensor g = projection_grid(cam, grid, view_map.dim(1), view_map.dim(2),
                                   feature_stride);
  return bilinear_sample(view_map, g);
}

}  // namespace viewfuse
