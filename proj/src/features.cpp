#include "pfa/features.hpp"

#include <algorithm>
#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "pfa/checkpoint.hpp"

namespace pfa {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

nlohmann::json FeatureExtractorOptions::to_json() const {
  return {{"widths", widths}, {"pool_after", pool_after}, {"tap", tap}, {"seed", seed}, {"checkpoint", checkpoint}};
}

FeatureExtractorOptions FeatureExtractorOptions::from_json(const nlohmann::json& j) {
  FeatureExtractorOptions o;
  o.widths = j.value("widths", o.widths);
  o.pool_after = j.value("pool_after", o.pool_after);
  o.tap = j.value("tap", o.tap);
  o.seed = j.value("seed", o.seed);
  o.checkpoint = j.value("checkpoint", o.checkpoint);
  return o;
}

FeatureExtractorImpl::FeatureExtractorImpl(FeatureExtractorOptions options) : options_(std::move(options)) {
  if (options_.tap < 1 || options_.tap > static_cast<int>(options_.widths.size())) {
    throw std::invalid_argument("feature tap must name one of the conv layers");
  }
  auto gen = at::make_generator<at::CPUGeneratorImpl>(options_.seed);
  int64_t in = 3;
  for (std::size_t i = 0; i < static_cast<std::size_t>(options_.tap); ++i) {
    const int64_t out = options_.widths[i];
    auto conv = nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1));
    {
      torch::NoGradGuard guard;
      const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
      conv->weight.copy_(torch::randn(conv->weight.sizes(), gen) * std);
      conv->bias.zero_();
    }
    convs_.push_back(register_module("conv" + std::to_string(i + 1), conv));
    in = out;
  }
  if (!options_.checkpoint.empty()) load_checkpoint(*this, options_.checkpoint);
  eval();
  for (auto& p : parameters()) p.requires_grad_(false);
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = torch::relu(convs_[i](h));
    const int layer = static_cast<int>(i) + 1;
    const bool pool = std::find(options_.pool_after.begin(), options_.pool_after.end(), layer) != options_.pool_after.end();
    if (pool && layer < options_.tap && h.size(2) >= 2) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
  }
  return h;
}

IdentityEmbedder::IdentityEmbedder(FeatureExtractorOptions options)
    : features_(FeatureExtractor(std::move(options))) {}

torch::Tensor standardize_images(const torch::Tensor& images) {
  auto flat = images.reshape({images.size(0), -1});
  auto mean = flat.mean(1, true);
  auto std = flat.std(1, /*unbiased=*/false, true).clamp_min(1e-6);
  return ((flat - mean) / std).reshape(images.sizes());
}

torch::Tensor IdentityEmbedder::embed(const torch::Tensor& images) {
  torch::NoGradGuard guard;
  auto f = features_->forward(standardize_images(images)).reshape({images.size(0), -1});
  return F::normalize(f, F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

torch::Tensor IdentityEmbedder::similarity(const torch::Tensor& a, const torch::Tensor& b) {
  return (embed(a) * embed(b)).sum(1);
}

}  // namespace pfa
