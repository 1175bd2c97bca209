#include "fssda/config.hpp"

#include <cctype>
#include <charconv>
#include <istream>
#include <sstream>

#include "fssda/errors.hpp"

namespace fssda {
namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* kind,
                            std::size_t line) {
  throw ConfigError("field '" + key + "': expected " + kind + ", got '" + value + "'", line);
}

double parse_double(const std::string& key, const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) bad_value(key, text, "a number", line);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, text, "a number", line);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& text, std::size_t line) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) bad_value(key, text, "a non-negative integer", line);
  return v;
}

}  // namespace

std::string trim(const std::string& text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return text.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

ConfigStore ConfigStore::parse(std::istream& in) {
  ConfigStore store;
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError("malformed section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key", line_no);
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    store.set(key, trim(line.substr(eq + 1)), line_no);
  }
  return store;
}

ConfigStore ConfigStore::parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

void ConfigStore::set(const std::string& key, const std::string& value, std::size_t line) {
  entries_[key] = Entry{value, line, false};
}

void ConfigStore::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  set(key, trim(assignment.substr(eq + 1)));
}

const ConfigStore::Entry* ConfigStore::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

bool ConfigStore::has(const std::string& key) const { return entries_.contains(key); }

std::string ConfigStore::get_string(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

double ConfigStore::get_double(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  return e ? parse_double(key, e->value, e->line) : fallback;
}

std::size_t ConfigStore::get_size(const std::string& key, std::size_t fallback) const {
  const Entry* e = find(key);
  return e ? static_cast<std::size_t>(parse_u64(key, e->value, e->line)) : fallback;
}

std::uint64_t ConfigStore::get_u64(const std::string& key, std::uint64_t fallback) const {
  const Entry* e = find(key);
  return e ? parse_u64(key, e->value, e->line) : fallback;
}

bool ConfigStore::get_bool(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes" || e->value == "on") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no" || e->value == "off") return false;
  bad_value(key, e->value, "a boolean", e->line);
}

std::vector<std::string> ConfigStore::get_list(const std::string& key,
                                               const std::vector<std::string>& fallback) const {
  const Entry* e = find(key);
  return e ? split_list(e->value) : fallback;
}

std::vector<double> ConfigStore::get_doubles(const std::string& key,
                                             const std::vector<double>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(e->value)) out.push_back(parse_double(key, item, e->line));
  return out;
}

std::vector<std::uint64_t> ConfigStore::get_u64s(const std::string& key,
                                                 const std::vector<std::uint64_t>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(e->value)) out.push_back(parse_u64(key, item, e->line));
  return out;
}

std::vector<std::pair<std::string, std::size_t>> ConfigStore::unused_keys() const {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& [key, entry] : entries_) {
    if (!entry.used) out.emplace_back(key, entry.line);
  }
  return out;
}

}  // namespace fssda
