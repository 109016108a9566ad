#pragma once

#include <filesystem>

#include <json.hpp>
#include <torch/torch.h>

namespace pfa {

// A checkpoint is a libtorch archive (`name.pt`) holding the module's named
// parameters and buffers plus a "pfa_meta" string entry with a JSON
// metadata record. The same record is mirrored to `name.json`.
void save_checkpoint(torch::nn::Module& module, const std::filesystem::path& path, const nlohmann::json& meta);

// Loads parameters/buffers into an already constructed module of the same
// architecture and returns the embedded metadata.
nlohmann::json load_checkpoint(torch::nn::Module& module, const std::filesystem::path& path);

// Metadata only (from the archive; the sidecar is for external tools).
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace pfa
