#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lionxa::text {

std::vector<std::string> split_lines(std::string_view text);
std::string trim(std::string_view s);
// Drops everything from the first '#'.
std::string strip_comment(std::string_view line);
std::vector<std::string> split(std::string_view s, char sep);
// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace lionxa::text
