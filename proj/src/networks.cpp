#include "pfa/networks.hpp"

#include <cmath>

namespace pfa {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;

nn::Conv2d reflect_conv(int64_t in, int64_t out, int64_t kernel) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(1).padding(kernel / 2).padding_mode(torch::kReflect));
}

nn::Conv2d strided_conv(int64_t in, int64_t out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
}

nn::InstanceNorm2d instance_norm(int64_t channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true));
}

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kSlope)); }

}  // namespace

Upsample parse_upsample(const std::string& name) {
  if (name == "deconv") return Upsample::deconv;
  if (name == "resize_conv") return Upsample::resize_conv;
  throw ConfigError("unknown upsample mode '" + name + "' (expected deconv|resize_conv)");
}

std::string to_string(Upsample u) { return u == Upsample::deconv ? "deconv" : "resize_conv"; }

void he_initialize(nn::Module& module, double negative_slope) {
  torch::NoGradGuard guard;
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& p : module.named_parameters(/*recurse=*/true)) {
    auto& t = p.value();
    if (ends_with(p.key(), "weight") && t.dim() >= 2) {
      nn::init::kaiming_normal_(t, negative_slope, torch::kFanIn, torch::kLeakyReLU);
    } else if (ends_with(p.key(), "bias")) {
      t.zero_();
    }
  }
}

void check_image_batch(const torch::Tensor& x, int64_t size, const char* what) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != x.size(3) || (size > 0 && x.size(2) != size)) {
    std::ostringstream os;
    os << what << ": expected (b, 3, " << (size > 0 ? std::to_string(size) : "h") << ", "
       << (size > 0 ? std::to_string(size) : "h") << "), got " << x.sizes();
    throw std::invalid_argument(os.str());
  }
}

// ---------------------------------------------------------------------------

nlohmann::json SubGeneratorOptions::to_json() const {
  return {{"in_channels", in_channels}, {"widths", widths}, {"res_blocks", res_blocks},
          {"outer_kernel", outer_kernel}, {"upsample", to_string(upsample)}};
}

SubGeneratorOptions SubGeneratorOptions::from_json(const nlohmann::json& j) {
  SubGeneratorOptions o;
  o.in_channels = j.value("in_channels", o.in_channels);
  o.widths = j.value("widths", o.widths);
  o.res_blocks = j.value("res_blocks", o.res_blocks);
  o.outer_kernel = j.value("outer_kernel", o.outer_kernel);
  o.upsample = parse_upsample(j.value("upsample", std::string("deconv")));
  return o;
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", reflect_conv(channels, channels, 3));
  norm1_ = register_module("norm1", instance_norm(channels));
  conv2_ = register_module("conv2", reflect_conv(channels, channels, 3));
  norm2_ = register_module("norm2", instance_norm(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = F::leaky_relu(norm1_(conv1_(x)), F::LeakyReLUFuncOptions().negative_slope(kSlope));
  return x + norm2_(conv2_(h));
}

SubGeneratorImpl::SubGeneratorImpl(SubGeneratorOptions options) : options_(std::move(options)) {
  if (options_.widths.size() != 3) throw std::invalid_argument("sub-generator needs three encoder widths");
  const auto& w = options_.widths;
  nn::Sequential body;
  body->push_back(reflect_conv(options_.in_channels, w[0], options_.outer_kernel));
  body->push_back(instance_norm(w[0]));
  body->push_back(lrelu());
  body->push_back(strided_conv(w[0], w[1]));
  body->push_back(instance_norm(w[1]));
  body->push_back(lrelu());
  body->push_back(strided_conv(w[1], w[2]));
  body->push_back(instance_norm(w[2]));
  body->push_back(lrelu());
  for (int i = 0; i < options_.res_blocks; ++i) body->push_back(ResidualBlock(w[2]));

  auto up = [&](int64_t in, int64_t out) {
    if (options_.upsample == Upsample::deconv) {
      // k4 s2 p1 doubles the resolution exactly, undoing one strided conv.
      body->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1)));
    } else {
      body->push_back(nn::Upsample(
          nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
      body->push_back(reflect_conv(in, out, 3));
    }
    body->push_back(instance_norm(out));
    body->push_back(lrelu());
  };
  up(w[2], w[1]);
  up(w[1], w[0]);
  body_ = register_module("body", body);
  out_ = register_module("out", reflect_conv(w[0], 3, options_.outer_kernel));
  he_initialize(*this, kSlope);
}

torch::Tensor SubGeneratorImpl::forward(const torch::Tensor& x) { return out_(body_->forward(x)); }

namespace {

void check_generator_input(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != x.size(3) || x.size(2) % 4 != 0) {
    std::ostringstream os;
    os << "generator input must be (b, 3, h, h) with h divisible by 4, got " << x.sizes();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

torch::Tensor subgen_step(const torch::Tensor& x, SubGenerator& g, bool gate) {
  check_generator_input(x);
  if (!gate) return x;
  return x + g->forward(x);
}

ProgressiveGeneratorImpl::ProgressiveGeneratorImpl(int group_count, SubGeneratorOptions options)
    : group_count_(group_count), options_(std::move(options)) {
  if (group_count_ < 2) throw std::invalid_argument("progressive generator needs N >= 2");
  if (options_.in_channels != 3) throw std::invalid_argument("sub-generators consume RGB images");
  for (int i = 1; i < group_count_; ++i) {
    subnets_.push_back(register_module("subnet" + std::to_string(i), SubGenerator(options_)));
  }
}

SubGenerator& ProgressiveGeneratorImpl::subnet(int index) {
  if (index < 1 || index >= group_count_) throw std::invalid_argument("sub-generator index out of range");
  return subnets_[static_cast<std::size_t>(index - 1)];
}

torch::Tensor ProgressiveGeneratorImpl::forward(const torch::Tensor& x, const GateVector& gates) {
  if (static_cast<int>(gates.size()) != group_count_ - 1) throw std::invalid_argument("gate vector length must be N-1");
  check_generator_input(x);
  auto out = x;
  for (int i = 1; i < group_count_; ++i) out = subgen_step(out, subnet(i), gates[static_cast<std::size_t>(i - 1)] != 0);
  return out;
}

torch::Tensor ProgressiveGeneratorImpl::forward(const torch::Tensor& x, const std::vector<GateVector>& gates) {
  check_generator_input(x);
  if (static_cast<int64_t>(gates.size()) != x.size(0)) throw std::invalid_argument("one gate vector per sample required");
  for (const auto& g : gates) {
    if (static_cast<int>(g.size()) != group_count_ - 1) throw std::invalid_argument("gate vector length must be N-1");
  }
  auto out = x;
  for (int i = 1; i < group_count_; ++i) {
    std::vector<int64_t> rows;
    for (std::size_t b = 0; b < gates.size(); ++b) {
      if (gates[b][static_cast<std::size_t>(i - 1)]) rows.push_back(static_cast<int64_t>(b));
    }
    if (rows.empty()) continue;
    auto& g = subnet(i);
    if (static_cast<int64_t>(rows.size()) == out.size(0)) {
      out = out + g->forward(out);
    } else {
      auto index = torch::tensor(rows, torch::kLong);
      out = out.index_add(0, index, g->forward(out.index_select(0, index)));
    }
  }
  return out;
}

ConditionalGeneratorImpl::ConditionalGeneratorImpl(int group_count, SubGeneratorOptions options)
    : group_count_(group_count) {
  if (group_count_ < 2) throw std::invalid_argument("conditional generator needs N >= 2");
  options.in_channels = 3 + group_count_;
  net_ = register_module("net", SubGenerator(options));
}

torch::Tensor ConditionalGeneratorImpl::forward(const torch::Tensor& x, const std::vector<int>& targets) {
  check_generator_input(x);
  if (static_cast<int64_t>(targets.size()) != x.size(0)) throw std::invalid_argument("one target per sample required");
  auto cond = build_condition_batch(targets, group_count_, x.size(2), x.size(3), x.options());
  return x + net_->forward(torch::cat({x, cond}, 1));
}

// ---------------------------------------------------------------------------

SpectralConv2dImpl::SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding)
    : stride_(stride), padding_(padding) {
  weight_ = register_parameter("weight", torch::empty({out, in, kernel, kernel}));
  bias_ = register_parameter("bias", torch::zeros({out}));
  nn::init::kaiming_normal_(weight_, kSlope, torch::kFanIn, torch::kLeakyReLU);
  u_ = register_buffer("u", F::normalize(torch::randn({out}), F::NormalizeFuncOptions().dim(0)));
  v_ = register_buffer("v", F::normalize(torch::randn({in * kernel * kernel}), F::NormalizeFuncOptions().dim(0)));
}

torch::Tensor SpectralConv2dImpl::normalized_weight() {
  auto w = weight_.reshape({weight_.size(0), -1});
  if (is_training()) {
    torch::NoGradGuard guard;
    auto opts = F::NormalizeFuncOptions().dim(0).eps(1e-12);
    v_.copy_(F::normalize(torch::mv(w.t(), u_), opts));
    u_.copy_(F::normalize(torch::mv(w, v_), opts));
  }
  auto u = u_.clone();
  auto v = v_.clone();
  auto sigma = torch::dot(u, torch::mv(w, v));
  return weight_ / sigma;
}

torch::Tensor SpectralConv2dImpl::forward(const torch::Tensor& x) {
  return F::conv2d(x, normalized_weight(), F::Conv2dFuncOptions().bias(bias_).stride(stride_).padding(padding_));
}

nlohmann::json DiscriminatorOptions::to_json() const { return {{"widths", widths}, {"in_channels", in_channels}}; }

DiscriminatorOptions DiscriminatorOptions::from_json(const nlohmann::json& j) {
  DiscriminatorOptions o;
  o.widths = j.value("widths", o.widths);
  o.in_channels = j.value("in_channels", o.in_channels);
  return o;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int group_count, DiscriminatorOptions options)
    : group_count_(group_count), options_(std::move(options)) {
  const auto& w = options_.widths;
  if (w.size() != 5) throw std::invalid_argument("discriminator needs five hidden widths");
  first_ = register_module("conv1", strided_conv(options_.in_channels, w[0]));
  const int64_t strides[] = {2, 2, 2, 1};
  int64_t in = w[0] + group_count_;
  for (std::size_t i = 0; i < 4; ++i) {
    hidden_.push_back(register_module("conv" + std::to_string(i + 2), SpectralConv2d(in, w[i + 1], 4, strides[i], 1)));
    in = w[i + 1];
  }
  last_ = register_module("conv6", nn::Conv2d(nn::Conv2dOptions(in, 1, 4).stride(1).padding(1)));
  nn::init::kaiming_normal_(first_->weight, kSlope, torch::kFanIn, torch::kLeakyReLU);
  nn::init::kaiming_normal_(last_->weight, 0.0, torch::kFanIn, torch::kLinear);
  torch::NoGradGuard guard;
  first_->bias.zero_();
  last_->bias.zero_();
}

torch::Tensor PatchDiscriminatorImpl::condition_for(const std::vector<int>& targets, int64_t image_size,
                                                    torch::TensorOptions options) const {
  const int64_t half = image_size / 2;
  return build_condition_batch(targets, group_count_, half, half, options);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& condition) {
  if (x.dim() != 4 || x.size(1) != options_.in_channels) {
    throw std::invalid_argument("discriminator input must have " + std::to_string(options_.in_channels) + " channels");
  }
  auto h = F::leaky_relu(first_(x), F::LeakyReLUFuncOptions().negative_slope(kSlope));
  if (condition.dim() != 4 || condition.size(0) != h.size(0) || condition.size(1) != group_count_ ||
      condition.size(2) != h.size(2) || condition.size(3) != h.size(3)) {
    std::ostringstream os;
    os << "condition " << condition.sizes() << " does not match first-layer features " << h.sizes()
       << " with N=" << group_count_;
    throw std::invalid_argument(os.str());
  }
  h = torch::cat({h, condition.to(h.dtype())}, 1);
  for (auto& layer : hidden_) h = F::leaky_relu(layer(h), F::LeakyReLUFuncOptions().negative_slope(kSlope));
  return last_(h);
}

// ---------------------------------------------------------------------------

nlohmann::json AgeEstimatorOptions::to_json() const { return {{"widths", widths}, {"image_size", image_size}}; }

AgeEstimatorOptions AgeEstimatorOptions::from_json(const nlohmann::json& j) {
  AgeEstimatorOptions o;
  o.widths = j.value("widths", o.widths);
  o.image_size = j.value("image_size", o.image_size);
  return o;
}

torch::Tensor expected_age(const torch::Tensor& age_logits) {
  auto ages = torch::arange(kAgeBins, age_logits.options());
  return (torch::softmax(age_logits, -1) * ages).sum(-1);
}

AgeEstimatorImpl::AgeEstimatorImpl(int group_count, AgeEstimatorOptions options)
    : group_count_(group_count), options_(std::move(options)) {
  nn::Sequential features;
  int64_t in = 3;
  int64_t spatial = options_.image_size;
  for (auto width : options_.widths) {
    features->push_back(strided_conv(in, width));
    features->push_back(nn::BatchNorm2d(width));
    features->push_back(nn::ReLU());
    in = width;
    spatial /= 2;
  }
  if (spatial < 1) {
    throw std::invalid_argument("age estimator: image size " + std::to_string(options_.image_size) +
                                " too small for " + std::to_string(options_.widths.size()) + " stride-2 layers");
  }
  features->push_back(nn::Flatten());
  features_ = register_module("features", features);
  age_head_ = register_module("age_head", nn::Linear(in * spatial * spatial, kAgeBins));
  group_head_ = register_module("group_head", nn::Linear(nn::LinearOptions(kAgeBins, group_count_).bias(false)));
  he_initialize(*this, 0.0);
}

AgeOutput AgeEstimatorImpl::forward(const torch::Tensor& x) {
  check_image_batch(x, options_.image_size, "age estimator");
  AgeOutput out;
  out.age_logits = age_head_(features_->forward(x));
  out.group_logits = group_head_(out.age_logits);
  out.expected_age = expected_age(out.age_logits);
  return out;
}

void AgeEstimatorImpl::freeze() {
  eval();
  for (auto& p : parameters()) p.requires_grad_(false);
}

}  // namespace pfa
