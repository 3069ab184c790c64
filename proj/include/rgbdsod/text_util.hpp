#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rgbdsod {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string join_sizes(const std::vector<std::size_t>& values);

std::size_t parse_size(std::string_view s);
long long parse_int(std::string_view s);
double parse_double(std::string_view s);
bool parse_bool(std::string_view s);
std::vector<std::size_t> parse_size_list(std::string_view s);

/// Flat "key=value" lines; blank lines and '#' comments are skipped.
/// Order and repeated keys are preserved.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

/// Fixed-precision decimal, locale independent.
std::string format_fixed(double value, int digits);

}  // namespace rgbdsod
