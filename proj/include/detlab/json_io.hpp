#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace detlab::json_io {

using nlohmann::json;

/// Parses a file; syntax errors become ParseError "<file>:<line>:<col>: ...".
json parse_file(const std::filesystem::path& path);
json parse_text(std::string_view text, std::string_view source);

void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Field accessors raising ParseError that names the JSON pointer of the
/// offending field, e.g. "/images/3/gts/0/box".
const json& field(const json& obj, std::string_view key, const std::string& where);
const json* optional_field(const json& obj, std::string_view key, const std::string& where);
double as_double(const json& v, const std::string& where);
std::uint64_t as_uint(const json& v, const std::string& where);
std::int64_t as_int(const json& v, const std::string& where);
bool as_bool(const json& v, const std::string& where);
std::string as_string(const json& v, const std::string& where);
std::vector<double> as_doubles(const json& v, const std::string& where);
const json& as_array(const json& v, const std::string& where);

inline std::string at(const std::string& where, std::string_view key) {
  return where + "/" + std::string(key);
}
inline std::string at(const std::string& where, std::size_t index) {
  return where + "/" + std::to_string(index);
}

}  // namespace detlab::json_io
