#include <cmath>

#include "oracles.hpp"
#include "pfa/losses.hpp"

#include <doctest.h>

using namespace pfa;

namespace {

double scalar(const torch::Tensor& t) { return t.item<double>(); }

// Logits with `index` beating every other entry by `gap`.
torch::Tensor saturated(int64_t width, int64_t index, double gap = 1000.0) {
  auto t = torch::zeros({1, width}, torch::kDouble);
  t[0][index] = gap;
  return t;
}

AgeOutput make_output(torch::Tensor age_logits, torch::Tensor group_logits) {
  AgeOutput o;
  o.expected_age = expected_age(age_logits);
  o.age_logits = std::move(age_logits);
  o.group_logits = std::move(group_logits);
  return o;
}

FeatureExtractorOptions small_features() {
  FeatureExtractorOptions o;
  o.widths = {4, 4, 6, 6, 8, 8, 8, 8, 8, 8};
  return o;
}

}  // namespace

TEST_CASE("generator adversarial loss") {
  CHECK(scalar(adv_loss_G(torch::ones({2, 1, 3, 3}))) == 0.0);
  CHECK(scalar(adv_loss_G(torch::zeros({2, 1, 3, 3}))) == 0.5);
  CHECK(scalar(adv_loss_G(torch::tensor({0.5, 1.5}, torch::kDouble))) == 0.125);
}

TEST_CASE("discriminator adversarial loss") {
  auto ones = torch::ones({4, 1, 2, 2});
  auto zeros = torch::zeros({4, 1, 2, 2});
  CHECK(scalar(adv_loss_D(ones, zeros)) == 0.0);
  CHECK(scalar(adv_loss_D(zeros, ones)) == 1.0);
  CHECK(scalar(adv_loss_D(ones * 0.5, ones * 0.5)) == 0.25);
}

TEST_CASE("adversarial losses are non-negative") {
  torch::manual_seed(1);
  for (int i = 0; i < 20; ++i) {
    auto a = torch::randn({3, 1, 2, 2}) * 3;
    auto b = torch::randn({3, 1, 2, 2}) * 3;
    CHECK(scalar(adv_loss_G(a)) >= 0.0);
    CHECK(scalar(adv_loss_D(a, b)) >= 0.0);
  }
  CHECK(scalar(adv_loss_G(torch::tensor({1.0, 1.0, 1.0 + 1e-3}))) > 0.0);
}

TEST_CASE("age loss examples") {
  // expected age equals the target and the group head is saturated on it
  auto exact = make_output(saturated(kAgeBins, 45), saturated(4, 2));
  auto l = age_loss(exact, torch::tensor({45.0}, torch::kDouble), {3});
  CHECK(scalar(l.total) == doctest::Approx(0.0).epsilon(1e-12));

  auto uniform = make_output(torch::zeros({1, kAgeBins}, torch::kDouble), torch::zeros({1, 4}, torch::kDouble));
  auto u = age_loss(uniform, torch::tensor({50.0}, torch::kDouble), {2});
  CHECK(scalar(u.regression) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(scalar(u.total) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto gap = make_output(torch::zeros({1, kAgeBins}, torch::kDouble), saturated(4, 0));
  CHECK(scalar(age_loss(gap, torch::tensor({30.0}, torch::kDouble), {1}).total) == doctest::Approx(20.0).epsilon(1e-12));

  CHECK_THROWS_AS(age_loss(gap, torch::tensor({30.0}, torch::kDouble), {5}), std::invalid_argument);
  CHECK_THROWS_AS(age_loss(gap, torch::tensor({30.0}, torch::kDouble), {0}), std::invalid_argument);
}

TEST_CASE("age loss reductions and the classification-only variant") {
  auto logits = torch::zeros({2, kAgeBins}, torch::kDouble);  // expected age 50 each
  auto out = make_output(logits, torch::zeros({2, 4}, torch::kDouble));
  auto targets = torch::tensor({44.0, 58.0}, torch::kDouble);
  AgeLossOptions mean_abs;
  CHECK(scalar(age_loss(out, targets, {1, 2}, mean_abs).regression) == doctest::Approx(7.0));
  AgeLossOptions l2{AgeReduction::batch_l2, AgeNet::dex_multitask};
  CHECK(scalar(age_loss(out, targets, {1, 2}, l2).regression) == doctest::Approx(10.0));
  AgeLossOptions cls{AgeReduction::mean_abs, AgeNet::classification_only};
  auto c = age_loss(out, targets, {1, 2}, cls);
  CHECK(scalar(c.regression) == 0.0);
  CHECK(scalar(c.total) == doctest::Approx(std::log(4.0)));

  // single sample: both reductions coincide
  auto one = make_output(torch::zeros({1, kAgeBins}, torch::kDouble), torch::zeros({1, 4}, torch::kDouble));
  auto t = torch::tensor({37.5}, torch::kDouble);
  CHECK(scalar(age_loss(one, t, {2}, mean_abs).total) == doctest::Approx(scalar(age_loss(one, t, {2}, l2).total)));
}

TEST_CASE("SSIM matches the windowed reference") {
  torch::manual_seed(2);
  for (int i = 0; i < 10; ++i) {
    auto a = torch::rand({1, 3, 8, 8}, torch::kDouble) * 2 - 1;
    auto b = torch::rand({1, 3, 8, 8}, torch::kDouble) * 2 - 1;
    CHECK(std::abs(scalar(ssim(a, b)) - oracle::ssim(a, b)) < 1e-10);
  }
  auto a = torch::rand({2, 3, 20, 17}, torch::kDouble) * 2 - 1;
  auto b = (a + 0.2 * torch::randn_like(a)).clamp(-1, 1);
  CHECK(std::abs(scalar(ssim(a, b)) - oracle::ssim(a, b)) < 1e-10);
  CHECK_THROWS_AS(ssim(a, b.slice(3, 0, 16)), std::invalid_argument);
}

TEST_CASE("identity loss components") {
  torch::manual_seed(3);
  FeatureExtractor phi(small_features());
  LossWeights w;
  auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;

  auto same = identity_loss(x, x, phi, w);
  CHECK(scalar(same.pixel) == 0.0);
  CHECK(scalar(same.ssim) == 0.0);
  CHECK(scalar(same.feature) == 0.0);
  CHECK(scalar(same.total) == 0.0);

  auto shifted = identity_loss(x, x + 0.1, phi, w);
  CHECK(scalar(shifted.pixel) == doctest::Approx(0.1).epsilon(1e-6));

  auto y = torch::rand({2, 3, 16, 16}) * 2 - 1;
  auto ab = identity_loss(x, y, phi, w);
  auto ba = identity_loss(y, x, phi, w);
  CHECK(scalar(ab.pixel) == scalar(ba.pixel));
  CHECK(scalar(ab.ssim) == doctest::Approx(scalar(ba.ssim)).epsilon(1e-6));
  const double expected = (1 - w.alpha_ssim) * scalar(ab.pixel) + w.alpha_ssim * scalar(ab.ssim) + w.alpha_fea * scalar(ab.feature);
  CHECK(scalar(ab.total) == doctest::Approx(expected).epsilon(1e-6));

  CHECK_THROWS_AS(identity_loss(x, y.slice(0, 0, 1), phi, w), std::invalid_argument);
}

TEST_CASE("feature extractor is frozen and deterministic") {
  FeatureExtractor a(small_features());
  FeatureExtractor b(small_features());
  auto x = torch::rand({1, 3, 64, 64});
  auto fa = a->forward(x);
  CHECK(torch::equal(fa, b->forward(x)));
  CHECK(torch::equal(fa, a->forward(x)));
  // three 2x pools before the 10th conv
  CHECK(fa.sizes() == torch::IntArrayRef({1, 8, 8, 8}));
  for (const auto& p : a->parameters()) CHECK_FALSE(p.requires_grad());
  auto other = small_features();
  other.seed += 1;
  CHECK_FALSE(torch::equal(fa, FeatureExtractor(other)->forward(x)));
}

TEST_CASE("total generator loss") {
  LossWeights w;
  LossReport zero;
  CHECK(total_G_loss(zero, w) == 0.0);
  LossReport unit;
  unit.adv = unit.age = unit.identity = 1.0;
  CHECK(total_G_loss(unit, w) == 100.42);
  LossReport half;
  half.adv = 0.5;
  CHECK(total_G_loss(half, w) == 50.0);

  // linear in each component
  LossReport r;
  r.adv = 0.3;
  r.age = 2.0;
  r.identity = 5.0;
  LossReport r2 = r;
  r2.age = 4.0;
  CHECK(total_G_loss(r2, w) - total_G_loss(r, w) == doctest::Approx(2.0 * w.lambda_age));
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.alpha_ssim = 1.5;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = {};
  w.lambda_age = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("loss gradients agree with central differences") {
  torch::manual_seed(4);
  const double tol = 1e-3;

  auto scores = torch::randn({2, 1, 3, 3}, torch::kDouble);
  CHECK(oracle::gradient_check([](const torch::Tensor& s) { return adv_loss_G(s); }, scores) < tol);
  auto other = torch::randn({2, 1, 3, 3}, torch::kDouble);
  CHECK(oracle::gradient_check([&](const torch::Tensor& s) { return adv_loss_D(s, other); }, scores) < tol);
  CHECK(oracle::gradient_check([&](const torch::Tensor& s) { return adv_loss_D(other, s); }, scores) < tol);

  auto x = torch::rand({2, 3, 8, 8}, torch::kDouble) * 2 - 1;
  auto ref = torch::rand({2, 3, 8, 8}, torch::kDouble) * 2 - 1;
  CHECK(oracle::gradient_check([&](const torch::Tensor& t) { return 1.0 - ssim(t, ref); }, x, 12) < tol);

  FeatureExtractor phi(small_features());
  phi->to(torch::kDouble);
  LossWeights w;
  CHECK(oracle::gradient_check([&](const torch::Tensor& t) { return identity_loss(ref, t, phi, w).total; }, x, 12) < tol);
  CHECK(oracle::gradient_check([&](const torch::Tensor& t) { return identity_loss(ref, t, phi, w).feature; }, x, 12) < tol);

  AgeEstimatorOptions ao;
  ao.widths = {4, 4, 4, 4, 4, 4};
  AgeEstimator A(4, ao);
  A->to(torch::kDouble);
  A->freeze();
  auto face = torch::rand({2, 3, 64, 64}, torch::kDouble) * 2 - 1;
  auto target = torch::tensor({35.0, 62.0}, torch::kDouble);
  CHECK(oracle::gradient_check([&](const torch::Tensor& t) { return age_loss(t, target, {2, 4}, A).total; }, face, 12) < tol);
}
