#pragma once

// Shortest round-trip number formatting and small text-parsing helpers shared
// by the dataset, report and history writers.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace acfr {

/// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);

/// Strict full-token parse; throws std::invalid_argument naming `what`.
double parse_double(std::string_view s, std::string_view what = "number");
long long parse_int(std::string_view s, std::string_view what = "integer");

/// Splits on any of `delims`, dropping empty tokens.
std::vector<std::string_view> split_tokens(std::string_view line, std::string_view delims);

std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace acfr
