#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace pfdfl {

/// Writes via a sibling temp file and rename; throws IoError on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace pfdfl
