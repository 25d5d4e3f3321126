#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mtsmae {

// Plain-text `key = value` lines; `#` starts a comment. Keys may repeat.
struct KeyValueEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<KeyValueEntry> parse_key_values(std::string_view text, const std::string& source);
std::vector<KeyValueEntry> read_key_value_file(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Typed parsing; failures raise config errors naming `what`.
double parse_double(std::string_view s, const std::string& what);
long long parse_int(std::string_view s, const std::string& what);
std::uint64_t parse_uint64(std::string_view s, const std::string& what);
bool parse_bool(std::string_view s, const std::string& what);

}  // namespace mtsmae
