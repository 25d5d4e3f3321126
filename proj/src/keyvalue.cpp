#include "mtsmae/keyvalue.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::vector<KeyValueEntry> parse_key_values(std::string_view text, const std::string& source) {
  std::vector<KeyValueEntry> entries;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config,
                  fmt::format("{}:{}: expected 'key = value', got '{}'", source, line_no, line));
    }
    KeyValueEntry entry{trim(std::string_view(line).substr(0, eq)),
                        trim(std::string_view(line).substr(eq + 1)), line_no};
    if (entry.key.empty()) {
      throw Error(ErrorKind::Config, fmt::format("{}:{}: empty key", source, line_no));
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<KeyValueEntry> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str(), path.string());
}

double parse_double(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorKind::Config, fmt::format("{}: '{}' is not a number", what, t));
  }
  return value;
}

long long parse_int(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorKind::Config, fmt::format("{}: '{}' is not an integer", what, t));
  }
  return value;
}

std::uint64_t parse_uint64(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorKind::Config, fmt::format("{}: '{}' is not an unsigned 64-bit integer", what, t));
  }
  return value;
}

bool parse_bool(std::string_view s, const std::string& what) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw Error(ErrorKind::Config, fmt::format("{}: '{}' is not a boolean", what, t));
}

}  // namespace mtsmae
