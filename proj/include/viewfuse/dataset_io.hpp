#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "viewfuse/scene.hpp"

namespace viewfuse {

// Dataset directory layout:
//
//   <root>/calibration.txt              scene calibration (see below)
//   <root>/frames/<id>/view<k>.pgm      8-bit binary PGM per camera k;
//                                       pixel p decodes to p / 255
//   <root>/frames/<id>/annotations.txt  one "x_m y_m" ground point per line
//
// <id> is a zero-padded six digit frame index; frames load in sorted order.
//
// calibration.txt is line-oriented "key = values" text with '#' comments and
// [section] headers:
//
//   format_version = 1
//   kernel_sigma_cells = <real>
//   [grid]          width_cells, height_cells, cell_size_m, origin_m (2 reals)
//   [render]        optional; RenderConfig fields (used for density targets)
//   [camera <k>]    intrinsics (9, row-major), rotation (9, row-major),
//                   translation (3), image_size (width height)
//   [model_camera <k>]  optional; same fields, the calibration the model
//                   projects with (defaults to [camera <k>])
//   [occluder <k>]  optional; x_m, y_m, radius_m, height_m, intensity
//
// Reals are written in shortest round-trip form.
inline constexpr int kCalibrationVersion = 1;

void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);
// 8-bit quantisation applied by write_pgm: round(clamp(v, 0, 1) * 255).
std::uint8_t quantize_pixel(double v);

void write_calibration(const std::filesystem::path& path, const Dataset& ds);
// Returns a Dataset with scene/cameras filled and no frames.
Dataset read_calibration(const std::filesystem::path& path);

void export_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset load_external_dataset(const std::filesystem::path& root);

std::string format_real(double v);

}  // namespace viewfuse
