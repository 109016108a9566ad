#include "pfa/losses.hpp"

#include <cmath>

namespace pfa {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  if (lambda_adv < 0 || lambda_age < 0 || lambda_ide < 0 || alpha_fea < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (alpha_ssim < 0 || alpha_ssim > 1) throw ConfigError("loss.alpha_ssim must lie in [0, 1]");
}

torch::Tensor adv_loss_G(const torch::Tensor& fake_scores) { return 0.5 * (fake_scores - 1.0).pow(2).mean(); }

torch::Tensor adv_loss_D(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return 0.5 * (real_scores - 1.0).pow(2).mean() + 0.5 * fake_scores.pow(2).mean();
}

AgeReduction parse_age_reduction(const std::string& name) {
  if (name == "mean_abs") return AgeReduction::mean_abs;
  if (name == "batch_l2") return AgeReduction::batch_l2;
  throw ConfigError("unknown age_loss.reduction '" + name + "' (expected mean_abs|batch_l2)");
}

AgeNet parse_age_net(const std::string& name) {
  if (name == "dex_multitask") return AgeNet::dex_multitask;
  if (name == "classification_only") return AgeNet::classification_only;
  throw ConfigError("unknown age net '" + name + "' (expected dex_multitask|classification_only)");
}

std::string to_string(AgeReduction r) { return r == AgeReduction::mean_abs ? "mean_abs" : "batch_l2"; }
std::string to_string(AgeNet a) { return a == AgeNet::dex_multitask ? "dex_multitask" : "classification_only"; }

AgeLoss age_loss(const AgeOutput& estimate, const torch::Tensor& target_age, const std::vector<int>& target_group,
                 const AgeLossOptions& options) {
  const auto n = estimate.group_logits.size(1);
  if (static_cast<int64_t>(target_group.size()) != estimate.group_logits.size(0)) {
    throw std::invalid_argument("age_loss: one target group per sample required");
  }
  std::vector<int64_t> classes;
  classes.reserve(target_group.size());
  for (int g : target_group) {
    if (g < 1 || g > n) {
      throw std::invalid_argument("age_loss: target group " + std::to_string(g) + " outside 1.." + std::to_string(n));
    }
    classes.push_back(g - 1);
  }
  AgeLoss out;
  out.classification = F::cross_entropy(estimate.group_logits, torch::tensor(classes, torch::kLong));
  auto gap = target_age.to(estimate.expected_age.dtype()) - estimate.expected_age;
  if (options.net == AgeNet::classification_only) {
    out.regression = torch::zeros({}, estimate.expected_age.options());
  } else if (options.reduction == AgeReduction::mean_abs) {
    out.regression = gap.abs().mean();
  } else {
    out.regression = gap.pow(2).sum().sqrt();
  }
  out.total = out.regression + out.classification;
  return out;
}

AgeLoss age_loss(const torch::Tensor& x_fake, const torch::Tensor& target_age, const std::vector<int>& target_group,
                 AgeEstimator& estimator, const AgeLossOptions& options) {
  return age_loss(estimator->forward(x_fake), target_age, target_group, options);
}

torch::Tensor gaussian_window(const SsimOptions& options, torch::TensorOptions tensor_options) {
  auto coords = torch::arange(options.window, tensor_options) - static_cast<double>(options.window / 2);
  auto g = torch::exp(-coords.pow(2) / (2.0 * options.sigma * options.sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options) {
  if (!a.sizes().equals(b.sizes()) || a.dim() != 4) throw std::invalid_argument("ssim: inputs must share a 4-D shape");
  const auto channels = a.size(1);
  auto window = gaussian_window(options, a.options()).expand({channels, 1, options.window, options.window}).contiguous();
  auto conv = [&](const torch::Tensor& x) {
    return F::conv2d(x, window, F::Conv2dFuncOptions().padding(options.window / 2).groups(channels));
  };
  const double c1 = std::pow(0.01 * options.dynamic_range, 2);
  const double c2 = std::pow(0.03 * options.dynamic_range, 2);
  auto mu_a = conv(a);
  auto mu_b = conv(b);
  auto mu_aa = mu_a * mu_a;
  auto mu_bb = mu_b * mu_b;
  auto mu_ab = mu_a * mu_b;
  auto var_a = conv(a * a) - mu_aa;
  auto var_b = conv(b * b) - mu_bb;
  auto cov = conv(a * b) - mu_ab;
  auto map = ((2.0 * mu_ab + c1) * (2.0 * cov + c2)) / ((mu_aa + mu_bb + c1) * (var_a + var_b + c2));
  return map.mean();
}

IdentityLoss identity_loss(const torch::Tensor& x_in, const torch::Tensor& x_out, FeatureExtractor& phi,
                           const LossWeights& weights, const SsimOptions& ssim_options) {
  if (!x_in.sizes().equals(x_out.sizes())) throw std::invalid_argument("identity_loss: input/output shapes differ");
  IdentityLoss out;
  out.pixel = (x_out - x_in).abs().mean();
  out.ssim = 1.0 - ssim(x_out, x_in, ssim_options);
  torch::Tensor reference;
  if (x_in.requires_grad()) {
    reference = phi->forward(x_in);
  } else {
    torch::NoGradGuard guard;
    reference = phi->forward(x_in);
  }
  out.feature = (phi->forward(x_out) - reference).pow(2).mean();
  out.total = (1.0 - weights.alpha_ssim) * out.pixel + weights.alpha_ssim * out.ssim + weights.alpha_fea * out.feature;
  return out;
}

std::map<std::string, double> LossReport::to_map() const {
  return {{"d_loss", d_loss}, {"adv", adv},       {"age", age},           {"pixel", pixel},
          {"ssim", ssim},     {"feature", feature}, {"identity", identity}, {"total", total}};
}

bool LossReport::finite() const {
  for (const auto& [name, v] : to_map()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double total_G_loss(const LossReport& parts, const LossWeights& weights) {
  return weights.lambda_adv * parts.adv + weights.lambda_age * parts.age + weights.lambda_ide * parts.identity;
}

torch::Tensor total_G_loss(const torch::Tensor& adv, const torch::Tensor& age, const torch::Tensor& identity,
                           const LossWeights& weights) {
  return weights.lambda_adv * adv + weights.lambda_age * age + weights.lambda_ide * identity;
}

}  // namespace pfa
