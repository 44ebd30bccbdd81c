#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lasermon::textio {

// 17 significant digits: exact round trip for binary64.
std::string format_double(double v);

double parse_double(std::string_view token, std::string_view context);
long long parse_int(std::string_view token, std::string_view context);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

std::string read_file(const std::filesystem::path& path);

// Writes atomically enough for our purposes: full content, then close.
// Throws IoError carrying the path on failure.
void write_file(const std::filesystem::path& path, std::string_view content);

void ensure_directory(const std::filesystem::path& dir);

}  // namespace lasermon::textio
