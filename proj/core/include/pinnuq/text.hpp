#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pinnuq {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Parses a full field as a double; "nan", "inf" accepted.  Throws an IO
/// error carrying `line` on failure.
double parse_double(std::string_view field, std::size_t line);

std::vector<std::string_view> split_csv_line(std::string_view line);

std::string_view trim(std::string_view s);

}  // namespace pinnuq
