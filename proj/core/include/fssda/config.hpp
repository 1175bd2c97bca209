#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fssda {

// Flat key/value configuration. Text form:
//
//   # comment
//   [federation]
//   rounds = 100          -> key "federation.rounds"
//   benchmark.pairs = a, b  (fully qualified keys work anywhere)
//
// Lookups record which keys were consumed so unknown keys can be reported.
class ConfigStore {
 public:
  static ConfigStore parse(std::istream& in);
  static ConfigStore parse_string(const std::string& text);

  void set(const std::string& key, const std::string& value, std::size_t line = 0);
  // "section.key=value" from the command line.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::uint64_t> get_u64s(const std::string& key,
                                      const std::vector<std::uint64_t>& fallback) const;

  // Keys that were set but never read, with their source line (0 for overrides).
  std::vector<std::pair<std::string, std::size_t>> unused_keys() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    mutable bool used = false;
  };
  const Entry* find(const std::string& key) const;

  std::map<std::string, Entry> entries_;
};

std::vector<std::string> split_list(const std::string& text);
std::string trim(const std::string& text);

}  // namespace fssda
