#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace histosub::tsv {

std::vector<std::string_view> split(std::string_view line, char sep = '\t');

/// Parses a finite double; throws InputError naming `context` otherwise.
double parse_double(std::string_view field, std::string_view context);
long long parse_int(std::string_view field, std::string_view context);

/// Shortest round-trip decimal representation; stable across runs.
std::string format_double(double v);

/// Reads all lines, stripping a trailing '\r'. Throws IoError if the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes `content` atomically enough for our purposes; throws IoError on failure.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace histosub::tsv
