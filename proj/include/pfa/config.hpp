#pragma once

#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "pfa/core.hpp"

namespace pfa {

// Resolved configuration: built-in defaults, then a JSON file, then
// dotted-key overrides (later sources win). Keys outside the default schema
// are rejected.
class Config {
 public:
  Config();

  static nlohmann::json defaults();

  // Merges a JSON file over the current values.
  void merge_file(const std::filesystem::path& path);
  void merge(const nlohmann::json& values, const std::string& prefix = "");

  // `value` is parsed as JSON when the default is not a string.
  void set(const std::string& key, const std::string& value);
  void set_json(const std::string& key, const nlohmann::json& value);

  bool has(const std::string& key) const;
  const nlohmann::json& at(const std::string& key) const;

  template <class T>
  T get(const std::string& key) const {
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + e.what());
    }
  }

  // True when the key came from a file or an override rather than a default.
  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  const nlohmann::json& values() const { return values_; }
  std::string dump() const { return values_.dump(2); }
  // Stable FNV-1a digest of the compact dump, as 16 hex digits.
  std::string hash() const;

 private:
  nlohmann::json values_;
  std::set<std::string> explicit_;
};

AgeGroupPartition partition_from(const Config& config);

std::string fnv1a_hex(const std::string& text);

}  // namespace pfa
