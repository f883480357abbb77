#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dualcan {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Writes to a sibling temp file and renames it over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace dualcan
