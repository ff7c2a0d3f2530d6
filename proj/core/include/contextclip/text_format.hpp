#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace contextclip {

// Shortest decimal form that parses back to the same double.
std::string format_real(double value);

// Whole-string parses; throw ParseError on trailing garbage or overflow.
double parse_real(std::string_view text);
std::int64_t parse_int(std::string_view text);
std::uint64_t parse_uint(std::string_view text);
bool parse_bool(std::string_view text);

std::string_view trim(std::string_view text);

}  // namespace contextclip
