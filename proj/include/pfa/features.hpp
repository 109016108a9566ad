#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace pfa {

// VGG-style conv stack (3x3 convs + ReLU, 2x2 max-pool after selected
// layers). Weights are either drawn from a private seeded generator or
// loaded from a checkpoint; either way the network is frozen.
struct FeatureExtractorOptions {
  std::vector<int64_t> widths = {16, 16, 32, 32, 64, 64, 64, 128, 128, 128};
  std::vector<int> pool_after = {2, 4, 7};
  int tap = 10;  // 1-based conv layer whose activation is returned
  std::uint64_t seed = 20200901;
  std::string checkpoint;  // empty: random features

  nlohmann::json to_json() const;
  static FeatureExtractorOptions from_json(const nlohmann::json& j);
};

class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(FeatureExtractorOptions options = {});

  torch::Tensor forward(const torch::Tensor& x);
  const FeatureExtractorOptions& options() const { return options_; }

 private:
  FeatureExtractorOptions options_;
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(FeatureExtractor);

// Per-image zero mean, unit variance over all pixels and channels.
torch::Tensor standardize_images(const torch::Tensor& images);

// Identity embedding: per-image standardization (mean/std over all pixels),
// frozen features, flatten, L2 normalization. Cosine similarity of two
// embeddings is their dot product.
class IdentityEmbedder {
 public:
  explicit IdentityEmbedder(FeatureExtractorOptions options);

  torch::Tensor embed(const torch::Tensor& images);
  // Row-wise cosine similarity of paired batches.
  torch::Tensor similarity(const torch::Tensor& a, const torch::Tensor& b);

 private:
  FeatureExtractor features_{nullptr};
};

}  // namespace pfa
