#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "viewfuse/params.hpp"

namespace viewfuse {

// On-disk container for named float64 arrays (checkpoints, map dumps).
//
// Layout, all integers little-endian:
//   8 bytes   magic "VWFARCH\0"
//   u32       format version (kArchiveVersion)
//   u64       manifest length in bytes
//   manifest  UTF-8 JSON object:
//               {"format_version": 1, "dtype": "f64le", "meta": {...},
//                "arrays": [{"name", "shape", "offset", "count"}, ...]}
//             offset/count are in values from the start of the payload
//   payload   the arrays' IEEE-754 binary64 values, little-endian, in
//             manifest order, no padding
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ParamBlock> arrays;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

ParamSet to_param_set(const Archive& archive);

}  // namespace viewfuse
