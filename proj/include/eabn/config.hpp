#pragma once

// Structured text config: [section] headers with key = value lines,
// '#' comments, used by the train command.

#include <iosfwd>
#include <map>
#include <string>

namespace eabn {

class Config {
 public:
  static Config parse(std::istream& in);
  static Config parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace eabn
