#include "viewfuse/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "viewfuse/error.hpp"
#include "viewfuse/log.hpp"

namespace fs = std::filesystem;

namespace viewfuse {

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::uint8_t quantize_pixel(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_pgm(const fs::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(quantize_pixel(image.data[i]));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

namespace {

// Reads the next whitespace-delimited PGM header token, skipping comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Image read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  if (pgm_token(is) != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  Image img;
  int maxval = 0;
  try {
    img.width = std::stoi(pgm_token(is));
    img.height = std::stoi(pgm_token(is));
    maxval = std::stoi(pgm_token(is));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw IoError(path.string() + ": unsupported PGM (need 8-bit, positive size)");
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(img.width) * img.height);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  img.data.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

namespace {

void write_reals(std::ostream& os, const std::string& key,
                 const std::vector<double>& v) {
  os << key << " =";
  for (double x : v) os << ' ' << format_real(x);
  os << '\n';
}

void write_camera(std::ostream& os, const std::string& header,
                  const CameraModel& c) {
  os << '[' << header << "]\n";
  std::vector<double> k, r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      k.push_back(c.intrinsics(i, j));
      r.push_back(c.rotation(i, j));
    }
  write_reals(os, "intrinsics", k);
  write_reals(os, "rotation", r);
  write_reals(os, "translation",
              {c.translation.x(), c.translation.y(), c.translation.z()});
  os << "image_size = " << c.image_width << ' ' << c.image_height << '\n';
}

struct Section {
  std::string name;
  std::map<std::string, std::vector<std::string>> fields;
};

class CalibrationReader {
 public:
  explicit CalibrationReader(const fs::path& path) : path_(path) {}

  std::vector<Section> parse() {
    std::ifstream is(path_);
    if (!is) throw IoError("cannot open " + path_.string());
    std::vector<Section> sections{{"", {}}};
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      line = line.substr(first);
      if (line.front() == '[') {
        const auto close = line.find(']');
        if (close == std::string::npos) {
          throw IoError(where(lineno) + ": unterminated section header");
        }
        sections.push_back({line.substr(1, close - 1), {}});
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError(where(lineno) + ": expected key = value");
      std::string key = line.substr(0, eq);
      key.erase(key.find_last_not_of(" \t") + 1);
      std::istringstream vs(line.substr(eq + 1));
      std::vector<std::string> values;
      for (std::string tok; vs >> tok;) values.push_back(tok);
      sections.back().fields[key] = std::move(values);
    }
    return sections;
  }

  std::string where(int lineno) const {
    return path_.string() + ":" + std::to_string(lineno);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<double> reals(const fs::path& path, const Section& s,
                          const std::string& context, const std::string& key,
                          std::size_t count) {
  auto it = s.fields.find(key);
  if (it == s.fields.end()) {
    throw IoError(path.string() + ": " + context + ": missing field '" + key + "'");
  }
  if (it->second.size() != count) {
    throw IoError(path.string() + ": " + context + ": field '" + key + "' needs " +
                  std::to_string(count) + " values, got " +
                  std::to_string(it->second.size()));
  }
  std::vector<double> out;
  for (const auto& tok : it->second) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() ||
        !std::isfinite(v)) {
      throw IoError(path.string() + ": " + context + ": field '" + key +
                    "' has non-numeric value '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

double real_or(const fs::path& path, const Section& s, const std::string& ctx,
               const std::string& key, double fallback) {
  if (!s.fields.count(key)) return fallback;
  return reals(path, s, ctx, key, 1)[0];
}

CameraModel read_camera(const fs::path& path, const Section& s,
                        const std::string& context) {
  const auto k = reals(path, s, context, "intrinsics", 9);
  const auto r = reals(path, s, context, "rotation", 9);
  const auto t = reals(path, s, context, "translation", 3);
  const auto size = reals(path, s, context, "image_size", 2);
  CameraModel c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      c.intrinsics(i, j) = k[i * 3 + j];
      c.rotation(i, j) = r[i * 3 + j];
    }
  c.translation = Vec3(t[0], t[1], t[2]);
  c.image_width = static_cast<int>(size[0]);
  c.image_height = static_cast<int>(size[1]);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + context + ": " + e.what());
  }
  return c;
}

// Splits "camera 3" into ("camera", 3); index -1 when absent.
std::pair<std::string, int> split_section(const std::string& name) {
  std::istringstream is(name);
  std::string kind;
  int index = -1;
  is >> kind;
  if (!(is >> index)) index = -1;
  return {kind, index};
}

}  // namespace

void write_calibration(const fs::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  const auto& sc = ds.scene;
  os << "# viewfuse scene calibration\n";
  os << "format_version = " << kCalibrationVersion << '\n';
  os << "kernel_sigma_cells = " << format_real(sc.kernel_sigma_cells) << '\n';
  os << "[grid]\n";
  os << "width_cells = " << sc.grid.width_cells << '\n';
  os << "height_cells = " << sc.grid.height_cells << '\n';
  os << "cell_size_m = " << format_real(sc.grid.cell_size_m) << '\n';
  write_reals(os, "origin_m", {sc.grid.origin_x_m, sc.grid.origin_y_m});
  const auto& rc = sc.render;
  os << "[render]\n";
  write_reals(os, "blob_base_radius_px", {rc.blob_base_radius_px});
  write_reals(os, "reference_depth_m", {rc.reference_depth_m});
  write_reals(os, "blob_aspect", {rc.blob_aspect});
  write_reals(os, "person_intensity", {rc.person_intensity});
  os << "occlusion = " << (rc.occlusion ? 1 : 0) << '\n';
  write_reals(os, "noise", {rc.noise});
  for (std::size_t i = 0; i < ds.render_cameras.size(); ++i) {
    write_camera(os, "camera " + std::to_string(i), ds.render_cameras[i]);
  }
  for (std::size_t i = 0; i < ds.model_cameras.size(); ++i) {
    if (ds.model_cameras[i] == ds.render_cameras[i]) continue;
    write_camera(os, "model_camera " + std::to_string(i), ds.model_cameras[i]);
  }
  for (std::size_t i = 0; i < sc.occluders.size(); ++i) {
    const auto& o = sc.occluders[i];
    os << "[occluder " << i << "]\n";
    write_reals(os, "x_m", {o.x_m});
    write_reals(os, "y_m", {o.y_m});
    write_reals(os, "radius_m", {o.radius_m});
    write_reals(os, "height_m", {o.height_m});
    write_reals(os, "intensity", {o.intensity});
  }
  if (!os) throw IoError("write failed for " + path.string());
}

Dataset read_calibration(const fs::path& path) {
  CalibrationReader reader(path);
  const auto sections = reader.parse();
  Dataset ds;
  auto& sc = ds.scene;
  const Section& top = sections.front();
  const double version = real_or(path, top, "header", "format_version", -1);
  if (version != kCalibrationVersion) {
    throw IoError(path.string() + ": header: unsupported or missing format_version");
  }
  sc.kernel_sigma_cells = real_or(path, top, "header", "kernel_sigma_cells", 2.0);

  std::map<int, CameraModel> cams, model_cams;
  std::map<int, Occluder> occluders;
  bool have_grid = false;
  for (std::size_t i = 1; i < sections.size(); ++i) {
    const Section& s = sections[i];
    const auto [kind, index] = split_section(s.name);
    if (kind == "grid") {
      sc.grid.width_cells = static_cast<int>(reals(path, s, "grid", "width_cells", 1)[0]);
      sc.grid.height_cells = static_cast<int>(reals(path, s, "grid", "height_cells", 1)[0]);
      sc.grid.cell_size_m = reals(path, s, "grid", "cell_size_m", 1)[0];
      const auto o = reals(path, s, "grid", "origin_m", 2);
      sc.grid.origin_x_m = o[0];
      sc.grid.origin_y_m = o[1];
      have_grid = true;
    } else if (kind == "render") {
      auto& rc = sc.render;
      rc.blob_base_radius_px = real_or(path, s, "render", "blob_base_radius_px", rc.blob_base_radius_px);
      rc.reference_depth_m = real_or(path, s, "render", "reference_depth_m", rc.reference_depth_m);
      rc.blob_aspect = real_or(path, s, "render", "blob_aspect", rc.blob_aspect);
      rc.person_intensity = real_or(path, s, "render", "person_intensity", rc.person_intensity);
      rc.occlusion = real_or(path, s, "render", "occlusion", rc.occlusion ? 1 : 0) != 0;
      rc.noise = real_or(path, s, "render", "noise", rc.noise);
    } else if ((kind == "camera" || kind == "model_camera") && index >= 0) {
      const std::string ctx = kind == "camera" ? "camera " + std::to_string(index)
                                               : "model_camera " + std::to_string(index);
      (kind == "camera" ? cams : model_cams)[index] = read_camera(path, s, ctx);
    } else if (kind == "occluder" && index >= 0) {
      const std::string ctx = "occluder " + std::to_string(index);
      Occluder o;
      o.x_m = reals(path, s, ctx, "x_m", 1)[0];
      o.y_m = reals(path, s, ctx, "y_m", 1)[0];
      o.radius_m = reals(path, s, ctx, "radius_m", 1)[0];
      o.height_m = reals(path, s, ctx, "height_m", 1)[0];
      o.intensity = real_or(path, s, ctx, "intensity", o.intensity);
      occluders[index] = o;
    } else {
      throw IoError(path.string() + ": unknown section [" + s.name + "]");
    }
  }
  if (!have_grid) throw IoError(path.string() + ": missing [grid] section");
  try {
    sc.grid.validate();
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": grid: " + e.what());
  }
  for (int i = 0; i < static_cast<int>(cams.size()); ++i) {
    if (!cams.count(i)) {
      throw IoError(path.string() + ": camera " + std::to_string(i) + ": missing section");
    }
    ds.render_cameras.push_back(cams[i]);
    ds.model_cameras.push_back(model_cams.count(i) ? model_cams[i] : cams[i]);
  }
  for (const auto& [i, c] : model_cams) {
    if (!cams.count(i)) {
      throw IoError(path.string() + ": model_camera " + std::to_string(i) +
                    ": no matching [camera " + std::to_string(i) + "]");
    }
  }
  if (ds.render_cameras.size() < 2) {
    throw IoError(path.string() + ": at least 2 cameras required");
  }
  for (const auto& [i, o] : occluders) sc.occluders.push_back(o);
  sc.cameras = ds.render_cameras;
  sc.render.image_width = ds.render_cameras.front().image_width;
  sc.render.image_height = ds.render_cameras.front().image_height;
  return ds;
}

namespace {

std::string frame_dir_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

std::vector<Point2> read_annotations(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<Point2> people;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string xs, ys, extra;
    if (!(ls >> xs)) continue;
    if (!(ls >> ys) || (ls >> extra)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected 'x_m y_m'");
    }
    Point2 p;
    for (auto [tok, dst] : {std::pair{&xs, &p.x}, std::pair{&ys, &p.y}}) {
      auto res = std::from_chars(tok->data(), tok->data() + tok->size(), *dst);
      if (res.ec != std::errc() || res.ptr != tok->data() + tok->size()) {
        throw IoError(path.string() + ":" + std::to_string(lineno) +
                      ": non-numeric coordinate '" + *tok + "'");
      }
    }
    people.push_back(p);
  }
  return people;
}

}  // namespace

void export_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root / "frames");
  write_calibration(root / "calibration.txt", ds);
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    const auto& frame = ds.frames[f];
    const fs::path dir = root / "frames" / frame_dir_name(f);
    fs::create_directories(dir);
    for (std::size_t k = 0; k < frame.images.size(); ++k) {
      write_pgm(dir / ("view" + std::to_string(k) + ".pgm"), frame.images[k]);
    }
    std::ofstream os(dir / "annotations.txt", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "annotations.txt").string());
    for (const auto& p : frame.people_world) {
      os << format_real(p.x) << ' ' << format_real(p.y) << '\n';
    }
  }
}

Dataset load_external_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw IoError(root.string() + ": dataset directory does not exist");
  }
  Dataset ds = read_calibration(root / "calibration.txt");
  const auto& grid = ds.scene.grid;
  const auto masks = camera_masks(ds.render_cameras, grid);
  const fs::path frames_dir = root / "frames";
  if (!fs::is_directory(frames_dir)) {
    throw IoError(frames_dir.string() + ": missing frames directory");
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(frames_dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<Image> images;
    for (std::size_t k = 0; k < ds.render_cameras.size(); ++k) {
      const fs::path p = dir / ("view" + std::to_string(k) + ".pgm");
      if (!fs::exists(p)) throw IoError(p.string() + ": missing view image");
      Image img = read_pgm(p);
      const auto& cam = ds.render_cameras[k];
      if (img.width != cam.image_width || img.height != cam.image_height) {
        throw IoError(p.string() + ": image_size " + std::to_string(img.width) +
                      "x" + std::to_string(img.height) + " differs from camera " +
                      std::to_string(k) + " calibration");
      }
      images.push_back(std::move(img));
    }
    const fs::path ann = dir / "annotations.txt";
    if (!fs::exists(ann)) throw IoError(ann.string() + ": missing annotation file");
    auto people = read_annotations(ann);
    for (const auto& p : people) {
      if (!grid.contains_cell(grid.world_to_cell(p))) {
        log_warning(ann.string() + ": annotation (" + format_real(p.x) + ", " +
                    format_real(p.y) + ") lies outside the ground grid");
      }
    }
    ds.frames.push_back(assemble_frame(std::move(images), std::move(people), masks,
                                       grid, ds.scene.kernel_sigma_cells));
  }
  return ds;
}

}  // namespace viewfuse
