#include "pfa/checkpoint.hpp"

#include <fstream>

#include "pfa/core.hpp"

namespace pfa {

namespace fs = std::filesystem;

fs::path sidecar_path(const fs::path& path) {
  auto p = path;
  p.replace_extension(".json");
  return p;
}

void save_checkpoint(torch::nn::Module& module, const fs::path& path, const nlohmann::json& meta) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  module.save(archive);
  archive.write("pfa_meta", c10::IValue(meta.dump()));
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
  std::ofstream side(sidecar_path(path));
  side << meta.dump(2) << "\n";
}

namespace {

nlohmann::json meta_from(torch::serialize::InputArchive& archive, const fs::path& path) {
  c10::IValue value;
  if (!archive.try_read("pfa_meta", value) || !value.isString()) {
    throw DataError("checkpoint " + path.string() + " has no metadata record");
  }
  return nlohmann::json::parse(value.toStringRef());
}

}  // namespace

nlohmann::json load_checkpoint(torch::nn::Module& module, const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  module.load(archive);
  return meta_from(archive, path);
}

nlohmann::json read_checkpoint_meta(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return meta_from(archive, path);
}

}  // namespace pfa
