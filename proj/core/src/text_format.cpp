#include "contextclip/text_format.hpp"

#include <charconv>
#include <cmath>

#include "contextclip/errors.hpp"

namespace contextclip {

std::string format_real(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

namespace {

template <typename T>
T parse_number(std::string_view text, const char* what) {
    text = trim(text);
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, value);
    if (text.empty() || res.ec != std::errc() || res.ptr != last) {
        throw ParseError("expected " + std::string(what) + ", got '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace

double parse_real(std::string_view text) {
    const double v = parse_number<double>(text, "a real number");
    if (!std::isfinite(v)) throw ParseError("non-finite real '" + std::string(text) + "'");
    return v;
}

std::int64_t parse_int(std::string_view text) { return parse_number<std::int64_t>(text, "an integer"); }

std::uint64_t parse_uint(std::string_view text) {
    return parse_number<std::uint64_t>(text, "a non-negative integer");
}

bool parse_bool(std::string_view text) {
    text = trim(text);
    if (text == "1" || text == "true") return true;
    if (text == "0" || text == "false") return false;
    throw ParseError("expected a boolean, got '" + std::string(text) + "'");
}

std::string_view trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

}  // namespace contextclip
