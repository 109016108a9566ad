#pragma once

#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "pfa/core.hpp"

namespace pfa {

enum class Upsample { deconv, resize_conv };

Upsample parse_upsample(const std::string& name);
std::string to_string(Upsample u);

// He (Kaiming normal, fan-in) initialization for every conv/linear weight,
// zero biases. `negative_slope` is the leaky-rectifier slope that follows.
void he_initialize(torch::nn::Module& module, double negative_slope);

// ---------------------------------------------------------------------------
// Generator side

struct SubGeneratorOptions {
  int64_t in_channels = 3;
  // Encoder widths; the decoder mirrors them.
  std::vector<int64_t> widths = {32, 64, 128};
  int res_blocks = 4;
  int64_t outer_kernel = 9;
  Upsample upsample = Upsample::deconv;

  nlohmann::json to_json() const;
  static SubGeneratorOptions from_json(const nlohmann::json& j);
};

// conv3x3-IN-LReLU-conv3x3-IN plus identity skip, nothing after the sum.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::InstanceNorm2d norm1_{nullptr}, norm2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Residual encoder-decoder that outputs the aging effect G_i(x) only; the
// skip connection and gate live in the progressive generator.
class SubGeneratorImpl : public torch::nn::Module {
 public:
  explicit SubGeneratorImpl(SubGeneratorOptions options = {});
  torch::Tensor forward(const torch::Tensor& x);

  const SubGeneratorOptions& options() const { return options_; }
  // Final conv of the residual branch.
  torch::nn::Conv2d& output_layer() { return out_; }

 private:
  SubGeneratorOptions options_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(SubGenerator);

// x + gate * G_i(x). A zero gate returns x itself without evaluating G_i.
torch::Tensor subgen_step(const torch::Tensor& x, SubGenerator& g, bool gate);

class ProgressiveGeneratorImpl : public torch::nn::Module {
 public:
  ProgressiveGeneratorImpl(int group_count, SubGeneratorOptions options = {});

  int group_count() const { return group_count_; }
  SubGenerator& subnet(int index);  // 1-based, index in 1..N-1
  const SubGeneratorOptions& options() const { return options_; }

  // Same gates for the whole batch.
  torch::Tensor forward(const torch::Tensor& x, const GateVector& gates);
  // Per-sample gates; each sub-generator only runs on the samples that
  // engage it.
  torch::Tensor forward(const torch::Tensor& x, const std::vector<GateVector>& gates);

 private:
  int group_count_;
  SubGeneratorOptions options_;
  std::vector<SubGenerator> subnets_;
};
TORCH_MODULE(ProgressiveGenerator);

// Single sub-generator-shaped network conditioned by concatenating the
// one-hot target planes onto the image: x + G([x; C_t]).
class ConditionalGeneratorImpl : public torch::nn::Module {
 public:
  ConditionalGeneratorImpl(int group_count, SubGeneratorOptions options = {});

  int group_count() const { return group_count_; }
  int64_t input_channels() const { return net_->options().in_channels; }

  torch::Tensor forward(const torch::Tensor& x, const std::vector<int>& targets);

 private:
  int group_count_;
  SubGenerator net_{nullptr};
};
TORCH_MODULE(ConditionalGenerator);

// ---------------------------------------------------------------------------
// Discriminator

// Conv2d whose weight is divided by its largest singular value, estimated
// with one power iteration per training-mode forward.
class SpectralConv2dImpl : public torch::nn::Module {
 public:
  SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor normalized_weight();

 private:
  int64_t stride_, padding_;
  torch::Tensor weight_, bias_, u_, v_;
};
TORCH_MODULE(SpectralConv2d);

struct DiscriminatorOptions {
  std::vector<int64_t> widths = {64, 128, 256, 512, 512};
  int64_t in_channels = 3;

  nlohmann::json to_json() const;
  static DiscriminatorOptions from_json(const nlohmann::json& j);
};

class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(int group_count, DiscriminatorOptions options = {});

  int group_count() const { return group_count_; }
  const DiscriminatorOptions& options() const { return options_; }

  // `condition` is (b, N, h/2, w/2): the one-hot planes at the resolution
  // of the first layer's feature maps.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& condition);

  // Condition planes sized for an input of `image_size` pixels.
  torch::Tensor condition_for(const std::vector<int>& targets, int64_t image_size,
                              torch::TensorOptions options = torch::kFloat) const;

 private:
  int group_count_;
  DiscriminatorOptions options_;
  torch::nn::Conv2d first_{nullptr}, last_{nullptr};
  std::vector<SpectralConv2d> hidden_;
};
TORCH_MODULE(PatchDiscriminator);

// ---------------------------------------------------------------------------
// Age estimator

inline constexpr int64_t kAgeBins = 101;  // ages 0..100

struct AgeEstimatorOptions {
  std::vector<int64_t> widths = {64, 128, 256, 512, 512, 512};
  int64_t image_size = 64;

  nlohmann::json to_json() const;
  static AgeEstimatorOptions from_json(const nlohmann::json& j);
};

struct AgeOutput {
  torch::Tensor expected_age;  // (b)
  torch::Tensor age_logits;    // (b, 101)
  torch::Tensor group_logits;  // (b, N)
};

// Softmax expectation over the 101 per-year logits.
torch::Tensor expected_age(const torch::Tensor& age_logits);

class AgeEstimatorImpl : public torch::nn::Module {
 public:
  AgeEstimatorImpl(int group_count, AgeEstimatorOptions options = {});

  int group_count() const { return group_count_; }
  const AgeEstimatorOptions& options() const { return options_; }

  AgeOutput forward(const torch::Tensor& x);

  // Puts the network in eval mode and stops gradients into its parameters.
  void freeze();

 private:
  int group_count_;
  AgeEstimatorOptions options_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear age_head_{nullptr};
  torch::nn::Linear group_head_{nullptr};
};
TORCH_MODULE(AgeEstimator);

// Checks that x is (b, 3, size, size).
void check_image_batch(const torch::Tensor& x, int64_t size, const char* what);

}  // namespace pfa
