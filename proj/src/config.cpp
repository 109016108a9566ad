#include "pfa/config.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace pfa {

namespace {

nlohmann::json::json_pointer pointer(const std::string& key) {
  std::string p;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return nlohmann::json::json_pointer(p);
}

bool compatible(const nlohmann::json& target, const nlohmann::json& value) {
  if (target.is_number()) {
    if (target.is_number_integer()) return value.is_number_integer();
    return value.is_number();
  }
  if (target.is_array()) return value.is_array();
  return target.type() == value.type();
}

}  // namespace

nlohmann::json Config::defaults() {
  return {
      {"data", {{"root", "data/synthetic"}, {"size", 64}, {"seed", 0}, {"train_fraction", 0.8}, {"flip", true}}},
      {"age_groups", {{"bounds", {30, 40, 50}}}},
      {"loss",
       {{"lambda_adv", 100.0},
        {"lambda_age", 0.4},
        {"lambda_ide", 0.02},
        {"alpha_ssim", 0.15},
        {"alpha_fea", 0.025},
        {"age_reduction", "mean_abs"}}},
      {"generator", {{"widths", {32, 64, 128}}, {"res_blocks", 4}, {"outer_kernel", 9}, {"upsample", "deconv"}}},
      {"features", {{"seed", 20200901}, {"checkpoint", ""}}},
      {"embedder",
       {{"seed", 1234567},
        {"checkpoint", ""},
        {"epochs", 30},
        {"batch_size", 32},
        {"lr", 1e-3},
        {"output", "identity_features.pt"}}},
      {"pretrain",
       {{"epochs", 50},
        {"batch_size", 128},
        {"lr", 1e-4},
        {"lr_decay", 0.7},
        {"decay_every", 15},
        {"seed", 0},
        {"output", "age_estimator.pt"}}},
      {"train",
       {{"max_iterations", 2000},
        {"batch_size", 12},
        {"lr_G", 1e-4},
        {"lr_D", 1e-4},
        {"adam_beta1", 0.5},
        {"adam_beta2", 0.99},
        {"mode", "pfa_end_to_end"},
        {"age_net", "dex_multitask"},
        {"direction", "aging"},
        {"target_age", "group_mean"},
        {"d_steps_per_g", 1},
        {"checkpoint_every", 500},
        {"keep_last", 3},
        {"probe_faces", 32},
        {"seed", 0},
        {"age_checkpoint", ""},
        {"evaluate", true}}},
      {"eval",
       {{"oracle_checkpoint", ""},
        {"max_faces", 0},
        {"is_splits", 10},
        {"far", 1e-3},
        {"batch_size", 32},
        {"montage_faces", 8}}},
  };
}

Config::Config() : values_(defaults()) {}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path.string() + " must hold a JSON object");
  merge(j);
}

void Config::merge(const nlohmann::json& values, const std::string& prefix) {
  for (auto it = values.begin(); it != values.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      merge(*it, key);
    } else {
      set_json(key, *it);
    }
  }
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& current = at(key);
  if (current.is_string()) {
    set_json(key, value);
    return;
  }
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("cannot parse value '" + value + "' for config key '" + key + "'");
  }
  set_json(key, parsed);
}

void Config::set_json(const std::string& key, const nlohmann::json& value) {
  const auto& current = at(key);
  if (current.is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
  if (!compatible(current, value)) {
    throw ConfigError("config key '" + key + "' expects " + std::string(current.type_name()) + ", got " + value.dump());
  }
  values_[pointer(key)] = value;
  explicit_.insert(key);
}

bool Config::has(const std::string& key) const { return values_.contains(pointer(key)); }

const nlohmann::json& Config::at(const std::string& key) const {
  if (!has(key)) throw ConfigError("unknown config key '" + key + "'");
  return values_.at(pointer(key));
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string Config::hash() const { return fnv1a_hex(values_.dump()); }

AgeGroupPartition partition_from(const Config& config) {
  try {
    return AgeGroupPartition(config.get<std::vector<int>>("age_groups.bounds"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("age_groups.bounds: ") + e.what());
  }
}

}  // namespace pfa
