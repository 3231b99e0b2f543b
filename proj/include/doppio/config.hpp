// Minimal structured-text dialect shared by meta files, scenario files and
// pipeline configs. Supported grammar (a TOML subset):
//
//   # comment
//   key = 3.5 | 7 | true | "text" | [1, 2, 3]
//   [section]            keys live under "section.key"
//   [[block]]            appends one table to the repeated-block list "block"
//
// Parsing is locale-independent; decimal point only.
#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace doppio {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigValue {
  std::variant<double, bool, std::string, std::vector<double>> v;

  double as_double() const;
  int as_int() const;
  bool as_bool() const;
  const std::string& as_string() const;
  const std::vector<double>& as_array() const;
};

class ConfigTable {
 public:
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::vector<double> get_array(const std::string& key) const;

  // Repeated [[name]] blocks, in file order.
  const std::vector<ConfigTable>& blocks(const std::string& name) const;

  void set(const std::string& key, ConfigValue value) {
    values_[key] = std::move(value);
  }
  void add_block(const std::string& name, ConfigTable table) {
    blocks_[name].push_back(std::move(table));
  }

  // Applies "dotted.key=value" overrides, e.g. from --set flags.
  void apply_override(const std::string& assignment);

  const std::map<std::string, ConfigValue>& values() const { return values_; }

 private:
  const ConfigValue& at(const std::string& key) const;

  std::map<std::string, ConfigValue> values_;
  std::map<std::string, std::vector<ConfigTable>> blocks_;
  static const std::vector<ConfigTable> kNoBlocks;
};

ConfigTable parse_config_text(const std::string& text,
                              const std::string& origin = "<string>");
ConfigTable load_config_file(const std::string& path);
void save_config_file(const std::string& path, const std::string& text);

}  // namespace doppio
