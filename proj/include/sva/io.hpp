#pragma once

#include <string>

namespace sva {

std::string read_file(const std::string& path);
// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace sva
