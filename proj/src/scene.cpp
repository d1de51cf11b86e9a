#include "viewfuse/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "viewfuse/error.hpp"
#include "viewfuse/log.hpp"
#include "viewfuse/parallel.hpp"

namespace viewfuse {

Tensor Array2::as_tensor() const { return Tensor::from({1, rows, cols}, data); }

Tensor Image::as_tensor() const { return Tensor::from({1, height, width}, data); }

void SceneConfig::validate() const {
  grid.validate();
  if (people_min < 0 || people_min > people_max) {
    throw ConfigError("scene: people_count_range must satisfy 0 <= min <= max");
  }
  if (!(min_separation_m > 0.0)) {
    throw ConfigError("scene: min_separation_m must be > 0");
  }
  if (cameras.size() < 2) throw ConfigError("scene: at least 2 cameras required");
  if (render.image_width <= 0 || render.image_height <= 0) {
    throw ConfigError("scene: render image size must be positive");
  }
  if (!(kernel_sigma_cells > 0.0)) {
    throw ConfigError("scene: kernel_sigma_cells must be > 0");
  }
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    try {
      cameras[i].validate();
    } catch (const ConfigError& e) {
      throw ConfigError("scene: camera " + std::to_string(i) + ": " + e.what());
    }
    if (cameras[i].image_width != render.image_width ||
        cameras[i].image_height != render.image_height) {
      throw ConfigError("scene: camera " + std::to_string(i) +
                        ": image_size differs from render.image_size");
    }
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed + 0x9E3779B97F4A7C15ull * (stream + 1));
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return lo + static_cast<int>(r % span);
}

double normal(Rng& rng) {
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<Point2> sample_people(const SceneConfig& cfg, Rng& rng) {
  const auto& g = cfg.grid;
  const double x0 = g.origin_x_m - 0.5 * g.cell_size_m;
  const double y0 = g.origin_y_m - 0.5 * g.cell_size_m;
  const double x1 = x0 + g.width_cells * g.cell_size_m;
  const double y1 = y0 + g.height_cells * g.cell_size_m;
  // Disc packing bound: max discs of radius sep/2 that fit the area.
  const double area = (x1 - x0) * (y1 - y0);
  const double disc = std::numbers::pi * 0.25 * cfg.min_separation_m *
                      cfg.min_separation_m;
  if (cfg.people_max * disc > 0.9069 * area) {
    throw ConfigError("scene: " + std::to_string(cfg.people_max) +
                      " people cannot fit at min_separation_m " +
                      std::to_string(cfg.min_separation_m) +
                      "; lower the density");
  }

  const int count = uniform_int(rng, cfg.people_min, cfg.people_max);
  constexpr int kRestarts = 50;
  constexpr int kTriesPerPerson = 2000;
  for (int restart = 0; restart < kRestarts; ++restart) {
    std::vector<Point2> people;
    people.reserve(count);
    bool failed = false;
    for (int k = 0; k < count && !failed; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < kTriesPerPerson; ++attempt) {
        const Point2 p{uniform(rng, x0, x1), uniform(rng, y0, y1)};
        bool ok = true;
        for (const auto& q : people) {
          if (std::hypot(p.x - q.x, p.y - q.y) < cfg.min_separation_m) {
            ok = false;
            break;
          }
        }
        for (const auto& o : cfg.occluders) {
          if (!ok) break;
          if (std::hypot(p.x - o.x_m, p.y - o.y_m) < o.radius_m + 0.25) ok = false;
        }
        if (ok) {
          people.push_back(p);
          placed = true;
          break;
        }
      }
      failed = !placed;
    }
    if (!failed) return people;
  }
  throw ConfigError("scene: could not place " + std::to_string(count) +
                    " people at min_separation_m " +
                    std::to_string(cfg.min_separation_m) +
                    "; lower the density");
}

Array2 make_scene_gt(const std::vector<Point2>& people_world,
                     const GroundGrid& grid, double kernel_sigma_cells,
                     int* skipped) {
  if (!(kernel_sigma_cells > 0.0)) {
    throw ConfigError("kernel_sigma_cells must be > 0");
  }
  Array2 gt = Array2::zeros(grid.height_cells, grid.width_cells);
  const double radius = 4.0 * kernel_sigma_cells;
  const double inv2s2 = 1.0 / (2.0 * kernel_sigma_cells * kernel_sigma_cells);
  int outside = 0;
  for (const auto& p : people_world) {
    const Point2 c = grid.world_to_cell(p);
    if (!grid.contains_cell(c)) {
      ++outside;
      continue;
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(c.y - radius)));
    const int r1 = std::min(grid.height_cells - 1,
                            static_cast<int>(std::ceil(c.y + radius)));
    const int c0 = std::max(0, static_cast<int>(std::floor(c.x - radius)));
    const int c1 = std::min(grid.width_cells - 1,
                            static_cast<int>(std::ceil(c.x + radius)));
    for (int r = r0; r <= r1; ++r) {
      for (int col = c0; col <= c1; ++col) {
        const double dx = col - c.x, dy = r - c.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        gt.at(r, col) += std::exp(-d2 * inv2s2);
      }
    }
  }
  if (outside > 0) {
    log_warning(std::to_string(outside) +
                " annotated people outside the ground grid were skipped");
  }
  if (skipped) *skipped = outside;
  return gt;
}

namespace {

struct Paintable {
  double depth;
  int person;  // -1 for occluders
  std::size_t index;
};

void paint_ellipse(RenderedView& out, double cx, double cy, double rx, double ry,
                   double value, int owner) {
  Image& img = out.image;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double u = (x - cx) / rx, v = (y - cy) / ry;
      if (u * u + v * v > 1.0) continue;
      img.at(y, x) = value;
      out.attribution[static_cast<std::size_t>(y) * img.width + x] = owner;
    }
  }
}

void paint_rect(RenderedView& out, double xa, double xb, double ya, double yb,
                double value, int owner) {
  Image& img = out.image;
  const int x0 = std::max(0, static_cast<int>(std::ceil(std::min(xa, xb))));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::floor(std::max(xa, xb))));
  const int y0 = std::max(0, static_cast<int>(std::ceil(std::min(ya, yb))));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::floor(std::max(ya, yb))));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      img.at(y, x) = value;
      out.attribution[static_cast<std::size_t>(y) * img.width + x] = owner;
    }
  }
}

}  // namespace

RenderedView render_view(const std::vector<Point2>& people_world,
                         const CameraModel& cam, const SceneConfig& cfg,
                         Rng* noise_rng) {
  const RenderConfig& rc = cfg.render;
  RenderedView out;
  out.image.width = cam.image_width;
  out.image.height = cam.image_height;
  out.image.data.assign(static_cast<std::size_t>(cam.image_width) * cam.image_height,
                        0.0);
  out.attribution.assign(out.image.data.size(), RenderedView::kBackgroundPixel);

  std::vector<Paintable> items;
  for (std::size_t i = 0; i < cfg.occluders.size(); ++i) {
    const auto& o = cfg.occluders[i];
    double depth = 0.0;
    if (cam.project(Vec3(o.x_m, o.y_m, 0.0), &depth)) {
      items.push_back({depth, -1, i});
    }
  }
  for (std::size_t i = 0; i < people_world.size(); ++i) {
    double depth = 0.0;
    if (cam.project(Vec3(people_world[i].x, people_world[i].y, 0.0), &depth)) {
      items.push_back({depth, static_cast<int>(i), i});
    }
  }
  if (rc.occlusion) {
    // Far to near; ties broken by kind then index for determinism.
    std::stable_sort(items.begin(), items.end(),
                     [](const Paintable& a, const Paintable& b) {
                       return a.depth > b.depth;
                     });
  } else {
    // Occluders first so they never hide people.
    std::stable_sort(items.begin(), items.end(),
                     [](const Paintable& a, const Paintable& b) {
                       return (a.person < 0) > (b.person < 0);
                     });
  }

  const double fx = cam.intrinsics(0, 0);
  for (const auto& it : items) {
    if (it.person < 0) {
      const auto& o = cfg.occluders[it.index];
      const auto base = cam.project(Vec3(o.x_m, o.y_m, 0.0));
      const auto top = cam.project(Vec3(o.x_m, o.y_m, o.height_m));
      if (!base) continue;
      const double half_w = o.radius_m * fx / it.depth;
      const double top_y = top ? top->y : 0.0;
      paint_rect(out, base->x - half_w, base->x + half_w, top_y, base->y,
                 o.intensity, RenderedView::kOccluderPixel);
    } else {
      const auto& p = people_world[it.index];
      const auto px = cam.project(Vec3(p.x, p.y, 0.0));
      const double r =
          std::max(1.0, rc.blob_base_radius_px * rc.reference_depth_m / it.depth);
      paint_ellipse(out, px->x, px->y, r, r * rc.blob_aspect, rc.person_intensity,
                    it.person);
    }
  }

  if (noise_rng && rc.noise > 0.0) {
    for (auto& v : out.image.data) v += uniform(*noise_rng, -rc.noise, rc.noise);
  }
  for (auto& v : out.image.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Array2 person_density(const std::vector<Point2>& people_world,
                      const CameraModel& cam, const SceneConfig& cfg,
                      int stride) {
  const RenderedView rv = render_view(people_world, cam, cfg, nullptr);
  const int fh = strided_size(cam.image_height, stride);
  const int fw = strided_size(cam.image_width, stride);
  Array2 d = Array2::zeros(fh, fw);
  const double inv = 1.0 / (static_cast<double>(stride) * stride);
  for (int y = 0; y < cam.image_height; ++y) {
    for (int x = 0; x < cam.image_width; ++x) {
      if (rv.attribution[static_cast<std::size_t>(y) * cam.image_width + x] >= 0) {
        d.at(y / stride, x / stride) += inv;
      }
    }
  }
  return d;
}

CameraModel perturb_camera(const CameraModel& cam, const CalibNoise& noise,
                           Rng& rng) {
  CameraModel out = cam;
  const double s = noise.rotation_deg_sigma * std::numbers::pi / 180.0;
  const Vec3 axis_angle(s * normal(rng), s * normal(rng), s * normal(rng));
  const double angle = axis_angle.norm();
  if (angle > 0.0) {
    const Mat3 delta = Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
    out.rotation = delta * cam.rotation;
  }
  const double t = noise.translation_m_sigma;
  out.translation += Vec3(t * normal(rng), t * normal(rng), t * normal(rng));
  return out;
}

std::vector<FovMask> camera_masks(const std::vector<CameraModel>& cams,
                                  const GroundGrid& grid) {
  std::vector<FovMask> masks;
  masks.reserve(cams.size());
  for (const auto& c : cams) masks.push_back(fov_mask(c, grid));
  return masks;
}

MultiViewFrame assemble_frame(std::vector<Image> images,
                              std::vector<Point2> people_world,
                              const std::vector<FovMask>& masks,
                              const GroundGrid& grid, double kernel_sigma_cells) {
  if (images.size() != masks.size()) {
    throw ShapeError("frame has " + std::to_string(images.size()) +
                     " images but " + std::to_string(masks.size()) + " masks");
  }
  MultiViewFrame f;
  f.scene_gt = make_scene_gt(people_world, grid, kernel_sigma_cells);
  f.images = std::move(images);
  f.people_world = std::move(people_world);
  f.masks = masks;
  for (const auto& m : masks) {
    Array2 v = f.scene_gt;
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] *= m.values()[i];
    f.view_gts.push_back(std::move(v));
  }
  return f;
}

MultiViewFrame generate_frame(const SceneConfig& cfg,
                              const std::vector<FovMask>& masks, Rng& rng) {
  auto people = sample_people(cfg, rng);
  std::vector<Image> images;
  for (const auto& cam : cfg.cameras) {
    images.push_back(render_view(people, cam, cfg, &rng).image);
  }
  return assemble_frame(std::move(images), std::move(people), masks, cfg.grid,
                        cfg.kernel_sigma_cells);
}

Dataset generate_dataset(const SceneConfig& cfg, int n_frames,
                         std::uint64_t seed, int workers) {
  cfg.validate();
  if (n_frames < 0) throw ConfigError("n_frames must be >= 0");
  Dataset ds;
  ds.scene = cfg;
  ds.seed = seed;
  ds.render_cameras = cfg.cameras;
  ds.model_cameras = cfg.cameras;
  if (cfg.calib_noise) {
    Rng rng(derive_seed(seed, kCalibrationStream));
    for (auto& c : ds.model_cameras) c = perturb_camera(c, *cfg.calib_noise, rng);
  }
  const auto masks = camera_masks(ds.render_cameras, cfg.grid);
  ds.frames.resize(static_cast<std::size_t>(n_frames));
  parallel_for(ds.frames.size(), workers, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    ds.frames[k] = generate_frame(cfg, masks, rng);
  });
  return ds;
}

}  // namespace viewfuse
