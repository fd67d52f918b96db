#pragma once

#include <span>
#include <string_view>

namespace lionxa::detail {

struct BuiltinFile {
  std::string_view category;  // "mappings" or "scenarios"
  std::string_view name;      // file stem
  std::string_view text;
};

// Config files compiled into the library (generated from configs/).
std::span<const BuiltinFile> builtin_files();

}  // namespace lionxa::detail
