#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace empdistill {

std::string_view trim(std::string_view text);
bool is_blank(std::string_view text);
std::string to_lower(std::string_view text);

// Whole-file read. Throws IoError.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`, so readers never
// observe a partial file. Creates parent directories. Throws IoError.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

// Splits on '\n', dropping a trailing '\r' per line. A final newline does not
// produce an empty trailing element.
std::vector<std::string> split_lines(std::string_view text);

}  // namespace empdistill
