#include "viewfuse/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "viewfuse/error.hpp"

namespace viewfuse {

namespace {

constexpr char kMagic[8] = {'V', 'W', 'F', 'A', 'R', 'C', 'H', '\0'};

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw IoError("archive truncated while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json manifest;
  manifest["format_version"] = kArchiveVersion;
  manifest["dtype"] = "f64le";
  manifest["meta"] = archive.meta;
  manifest["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : archive.arrays) {
    manifest["arrays"].push_back({{"name", a.name},
                                  {"shape", a.shape},
                                  {"offset", offset},
                                  {"count", a.values.size()}});
    offset += a.values.size();
  }
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kArchiveVersion);
  put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays)
    for (double v : a.values) put_le<double>(os, v);
  if (!os) throw IoError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + ": not a viewfuse archive (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(is, "format version");
  if (version != kArchiveVersion) {
    throw IoError(path.string() + ": unsupported archive version " +
                  std::to_string(version));
  }
  const auto len = get_le<std::uint64_t>(is, "manifest length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw IoError(path.string() + ": truncated manifest");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  }
  if (manifest.value("dtype", "") != "f64le") {
    throw IoError(path.string() + ": unsupported dtype");
  }
  Archive out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    ParamBlock b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::size_t>();
    if (numel(b.shape) != count) {
      throw IoError(path.string() + ": array '" + b.name +
                    "' count disagrees with shape");
    }
    b.values.resize(count);
    for (auto& v : b.values) v = get_le<double>(is, "array '" + b.name + "'");
    out.arrays.push_back(std::move(b));
  }
  return out;
}

ParamSet to_param_set(const Archive& archive) {
  ParamSet p;
  for (const auto& a : archive.arrays) p.add(a.name, a.shape, a.values);
  return p;
}

}  // namespace viewfuse
