#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pfa/features.hpp"
#include "pfa/networks.hpp"

namespace pfa {

struct LossWeights {
  double lambda_adv = 100.0;
  double lambda_age = 0.4;
  double lambda_ide = 0.02;
  double alpha_ssim = 0.15;
  double alpha_fea = 0.025;

  void validate() const;
};

// LSGAN objectives.
torch::Tensor adv_loss_G(const torch::Tensor& fake_scores);
torch::Tensor adv_loss_D(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

enum class AgeReduction { mean_abs, batch_l2 };
enum class AgeNet { dex_multitask, classification_only };

AgeReduction parse_age_reduction(const std::string& name);
AgeNet parse_age_net(const std::string& name);
std::string to_string(AgeReduction r);
std::string to_string(AgeNet a);

struct AgeLossOptions {
  AgeReduction reduction = AgeReduction::mean_abs;
  AgeNet net = AgeNet::dex_multitask;
};

struct AgeLoss {
  torch::Tensor regression;      // zero when the regression term is off
  torch::Tensor classification;  // mean cross-entropy over the batch
  torch::Tensor total;
};

// Regression gap between target and expected age plus group
// cross-entropy. Target groups are 1-based.
AgeLoss age_loss(const AgeOutput& estimate, const torch::Tensor& target_age,
                 const std::vector<int>& target_group, const AgeLossOptions& options = {});
AgeLoss age_loss(const torch::Tensor& x_fake, const torch::Tensor& target_age,
                 const std::vector<int>& target_group, AgeEstimator& estimator,
                 const AgeLossOptions& options = {});

struct SsimOptions {
  int64_t window = 11;
  double sigma = 1.5;
  double dynamic_range = 2.0;  // images live in [-1, 1]
};

// Normalized 2-D Gaussian window, shape (window, window).
torch::Tensor gaussian_window(const SsimOptions& options, torch::TensorOptions tensor_options);

// Mean SSIM over batch, channels and positions. Windows are zero padded so
// the SSIM map has the input's spatial size.
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});

struct IdentityLoss {
  torch::Tensor pixel;
  torch::Tensor ssim;
  torch::Tensor feature;
  torch::Tensor total;
};

IdentityLoss identity_loss(const torch::Tensor& x_in, const torch::Tensor& x_out, FeatureExtractor& phi,
                           const LossWeights& weights, const SsimOptions& ssim_options = {});

// Scalars logged per training step.
struct LossReport {
  double d_loss = 0.0;
  double adv = 0.0;
  double age = 0.0;
  double pixel = 0.0;
  double ssim = 0.0;
  double feature = 0.0;
  double identity = 0.0;
  double total = 0.0;

  std::map<std::string, double> to_map() const;
  bool finite() const;
  bool operator==(const LossReport&) const = default;
};

double total_G_loss(const LossReport& parts, const LossWeights& weights);
torch::Tensor total_G_loss(const torch::Tensor& adv, const torch::Tensor& age, const torch::Tensor& identity,
                           const LossWeights& weights);

}  // namespace pfa
