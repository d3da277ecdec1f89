#include "eabn/config.hpp"

#include <fstream>
#include <sstream>

#include "eabn/tensor.hpp"  // TensorError

namespace eabn {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(std::istream& in) {
  Config cfg;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw TensorError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw TensorError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw TensorError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw TensorError("config line " + std::to_string(line_no) + ": empty key");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TensorError("cannot open config '" + path + "'");
  return parse(in);
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string Config::get(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s != sections_.end()) {
    auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  throw TensorError("config is missing [" + section + "] " + key);
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  if (!has(section, key)) return fallback;
  const auto v = get(section, key);
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw TensorError("config [" + section + "] " + key + ": '" + v + "' is not a number");
  }
}

int64_t Config::get_int(const std::string& section, const std::string& key,
                        int64_t fallback) const {
  if (!has(section, key)) return fallback;
  const auto v = get(section, key);
  try {
    size_t pos = 0;
    int64_t i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw TensorError("config [" + section + "] " + key + ": '" + v + "' is not an integer");
  }
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const auto v = get(section, key);
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw TensorError("config [" + section + "] " + key + ": '" + v + "' is not a boolean");
}

}  // namespace eabn
