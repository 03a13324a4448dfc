#pragma once

// Single-file checkpoint container: a JSON metadata block followed by named
// float64 arrays.
//
//   "DFMTLCK1" | u64 meta_len | meta (JSON text) | u64 n_arrays |
//   n_arrays x { u32 name_len | name | u64 count | count x f64 }
//
// Integers and doubles are stored in host byte order.

#include "dfmtl/types.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace dfmtl {

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, VecR> arrays;

  bool has(const std::string& name) const { return arrays.count(name) > 0; }
  const VecR& array(const std::string& name) const;

  /// Writes to a temporary sibling and renames over `path`.
  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

}  // namespace dfmtl
