#include "doppio/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace doppio {

const std::vector<ConfigTable> ConfigTable::kNoBlocks;

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& tok, const std::string& where) {
  // std::from_chars is locale-independent by construction.
  double out = 0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError(where + ": not a number: '" + tok + "'");
  }
  return out;
}

ConfigValue parse_value(const std::string& raw, const std::string& where) {
  std::string tok = trim(raw);
  if (tok.empty()) throw ConfigError(where + ": empty value");
  if (tok == "true") return {true};
  if (tok == "false") return {false};
  if (tok.front() == '"') {
    if (tok.size() < 2 || tok.back() != '"') {
      throw ConfigError(where + ": unterminated string");
    }
    return {tok.substr(1, tok.size() - 2)};
  }
  if (tok.front() == '[') {
    if (tok.back() != ']') throw ConfigError(where + ": unterminated array");
    std::vector<double> arr;
    std::string body = tok.substr(1, tok.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      arr.push_back(parse_number(item, where));
    }
    return {arr};
  }
  return {parse_number(tok, where)};
}

}  // namespace

double ConfigValue::as_double() const {
  if (auto* d = std::get_if<double>(&v)) return *d;
  throw ConfigError("config value is not a number");
}

int ConfigValue::as_int() const {
  double d = as_double();
  double r = std::round(d);
  if (std::abs(d - r) > 1e-9) throw ConfigError("config value is not integral");
  return static_cast<int>(r);
}

bool ConfigValue::as_bool() const {
  if (auto* b = std::get_if<bool>(&v)) return *b;
  throw ConfigError("config value is not a bool");
}

const std::string& ConfigValue::as_string() const {
  if (auto* s = std::get_if<std::string>(&v)) return *s;
  throw ConfigError("config value is not a string");
}

const std::vector<double>& ConfigValue::as_array() const {
  if (auto* a = std::get_if<std::vector<double>>(&v)) return *a;
  throw ConfigError("config value is not an array");
}

const ConfigValue& ConfigTable::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

double ConfigTable::get_double(const std::string& key) const {
  return at(key).as_double();
}
double ConfigTable::get_double(const std::string& key, double fallback) const {
  return has(key) ? at(key).as_double() : fallback;
}
int ConfigTable::get_int(const std::string& key) const {
  return at(key).as_int();
}
int ConfigTable::get_int(const std::string& key, int fallback) const {
  return has(key) ? at(key).as_int() : fallback;
}
bool ConfigTable::get_bool(const std::string& key) const {
  return at(key).as_bool();
}
bool ConfigTable::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? at(key).as_bool() : fallback;
}
std::string ConfigTable::get_string(const std::string& key) const {
  return at(key).as_string();
}
std::string ConfigTable::get_string(const std::string& key,
                                    const std::string& fallback) const {
  return has(key) ? at(key).as_string() : fallback;
}
std::vector<double> ConfigTable::get_array(const std::string& key) const {
  return at(key).as_array();
}

const std::vector<ConfigTable>& ConfigTable::blocks(
    const std::string& name) const {
  auto it = blocks_.find(name);
  return it == blocks_.end() ? kNoBlocks : it->second;
}

void ConfigTable::apply_override(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like key=value: " + assignment);
  }
  std::string key = trim(assignment.substr(0, eq));
  values_[key] = parse_value(assignment.substr(eq + 1), "override " + key);
}

ConfigTable parse_config_text(const std::string& text,
                              const std::string& origin) {
  ConfigTable root;
  ConfigTable* current = &root;
  std::string prefix;
  // Block under construction; committed when the next header or EOF arrives.
  std::string block_name;
  ConfigTable block;

  auto commit_block = [&] {
    if (!block_name.empty()) {
      root.add_block(block_name, std::move(block));
      block = ConfigTable();
      block_name.clear();
    }
  };

  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string where = origin + ":" + std::to_string(lineno);
    size_t hash = line.find('#');
    // keep '#' inside quoted strings
    if (hash != std::string::npos &&
        line.find('"') == std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;

    if (line.rfind("[[", 0) == 0) {
      if (line.size() < 5 || line.substr(line.size() - 2) != "]]") {
        throw ConfigError(where + ": malformed block header");
      }
      commit_block();
      block_name = trim(line.substr(2, line.size() - 4));
      current = &block;
      prefix.clear();
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(where + ": malformed section header");
      }
      commit_block();
      prefix = trim(line.substr(1, line.size() - 2)) + ".";
      current = &root;
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    current->set(prefix + key, parse_value(line.substr(eq + 1), where));
  }
  commit_block();
  return root;
}

ConfigTable load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void save_config_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  out << text;
}

}  // namespace doppio
