#include <fstream>
#include <set>
#include <sstream>

#include "pfa/checkpoint.hpp"
#include "pfa/evaluation.hpp"
#include "pfa/synthetic.hpp"
#include "pfa/training.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace pfa;
using testing::TempDir;

namespace {

SubGeneratorOptions tiny_generator() {
  SubGeneratorOptions o;
  o.widths = {4, 6, 8};
  o.res_blocks = 1;
  o.outer_kernel = 3;
  return o;
}

AgeEstimatorOptions tiny_estimator() {
  AgeEstimatorOptions o;
  o.widths = {4, 4, 4, 4, 4, 4};
  o.image_size = 64;
  return o;
}

FeatureExtractorOptions tiny_features() {
  FeatureExtractorOptions o;
  o.widths = {4, 4, 4, 4, 4, 4, 4, 4, 4, 4};
  return o;
}

struct Fixture {
  TempDir dir{"pfa_train"};
  FaceDataset data;

  Fixture() : data(make()) {}

  FaceDataset make() {
    SyntheticOptions s;
    s.identities = 12;
    s.images_per_identity = 6;
    s.seed = 3;
    make_synthetic(dir.path(), s);
    return FaceDataset::open(dir.path(), 64, AgeGroupPartition());
  }

  TrainConfig config(TrainMode mode = TrainMode::pfa_end_to_end) const {
    TrainConfig c;
    c.mode = mode;
    c.batch_size = 4;
    c.generator = tiny_generator();
    c.features = tiny_features();
    c.seed = 5;
    return c;
  }

  Trainer trainer(const TrainConfig& c) {
    torch::manual_seed(1);
    return Trainer(c, data, AgeEstimator(4, tiny_estimator()), FeatureExtractor(c.features));
  }

  PairBatch pairs(int source, int target, int n = 4) {
    PairBatch b;
    auto idx = data.indices(Split::train);
    std::vector<std::size_t> chosen(idx.begin(), idx.begin() + n);
    b.images = data.batch(chosen);
    b.source.assign(static_cast<std::size_t>(n), source);
    b.target.assign(static_cast<std::size_t>(n), target);
    b.target_natural = b.target;
    b.target_age = torch::full({n}, 40.0f);
    return b;
  }

  RealBatch real(int n = 4) {
    RealBatch r;
    auto idx = data.indices(Split::train);
    r.images = data.batch(std::vector<std::size_t>(idx.end() - n, idx.end()));
    for (int i = 0; i < n; ++i) r.groups.push_back(1 + i % 4);
    return r;
  }
};

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

bool unchanged(const std::vector<torch::Tensor>& before, const std::vector<torch::Tensor>& after) {
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (!torch::equal(before[i], after[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("a (1, 4) pair updates every sub-generator in end-to-end mode") {
  Fixture f;
  auto t = f.trainer(f.config());
  auto& G = t.generator().progressive();
  std::vector<std::vector<torch::Tensor>> before;
  for (int i = 1; i <= 3; ++i) before.push_back(snapshot(G->subnet(i)->parameters()));
  t.train_step(f.pairs(1, 4), f.real());
  for (int i = 1; i <= 3; ++i) CHECK_FALSE(unchanged(before[static_cast<std::size_t>(i - 1)], G->subnet(i)->parameters()));
}

TEST_CASE("a pair with s = t leaves the sub-generators untouched") {
  Fixture f;
  auto t = f.trainer(f.config());
  auto before = snapshot(t.generator().parameters());
  auto d_before = snapshot(t.discriminator()->parameters());
  auto report = t.train_step(f.pairs(2, 2), f.real());
  CHECK(unchanged(before, t.generator().parameters()));
  CHECK_FALSE(unchanged(d_before, t.discriminator()->parameters()));
  CHECK(report.pixel == 0.0);
  CHECK(report.finite());
}

TEST_CASE("independent training of pair (2, 3) changes only sub-generator 2") {
  Fixture f;
  auto t = f.trainer(f.config(TrainMode::pfa_independent));
  auto& G = t.generator().progressive();
  std::vector<std::vector<torch::Tensor>> before;
  for (int i = 1; i <= 3; ++i) before.push_back(snapshot(G->subnet(i)->parameters()));
  t.train_step(f.pairs(2, 3), f.real());
  CHECK(unchanged(before[0], G->subnet(1)->parameters()));
  CHECK_FALSE(unchanged(before[1], G->subnet(2)->parameters()));
  CHECK(unchanged(before[2], G->subnet(3)->parameters()));
  CHECK_THROWS_AS(t.train_step(f.pairs(1, 3), f.real()), std::invalid_argument);
  for (int i = 0; i < 20; ++i) {
    auto p = t.sampler().sample(*std::make_unique<std::mt19937_64>(i));
    CHECK(p.target == p.source + 1);
  }
}

TEST_CASE("the age estimator stays bit-identical through GAN training") {
  Fixture f;
  auto t = f.trainer(f.config());
  auto before = snapshot(t.estimator()->parameters());
  std::vector<torch::Tensor> buffers_before;
  for (const auto& b : t.estimator()->buffers()) buffers_before.push_back(b.clone());
  for (int i = 0; i < 3; ++i) t.step();
  CHECK(unchanged(before, t.estimator()->parameters()));
  CHECK(unchanged(buffers_before, t.estimator()->buffers()));
  for (const auto& p : t.estimator()->parameters()) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("cgan_single: generator sees 3 + N channels, discriminator sees 3") {
  Fixture f;
  auto t = f.trainer(f.config(TrainMode::cgan_single));
  CHECK(t.generator().conditional()->input_channels() == 7);
  CHECK(t.discriminator()->options().in_channels == 3);
  auto report = t.step();
  CHECK(report.finite());
}

TEST_CASE("seeded training steps repeat bit for bit") {
  auto run = [] {
    Fixture f;
    auto t = f.trainer(f.config());
    std::vector<LossReport> out;
    for (int i = 0; i < 3; ++i) out.push_back(t.step());
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("non-finite inputs abort with a numerical error") {
  Fixture f;
  auto t = f.trainer(f.config());
  auto pairs = f.pairs(1, 2);
  pairs.images[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.train_step(pairs, f.real()), NumericalError);
}

TEST_CASE("classification_only forces lambda_age = 8 unless set") {
  Config config;
  config.set("train.age_net", "classification_only");
  CHECK(TrainConfig::from(config).weights.lambda_age == 8.0);
  CHECK(TrainConfig::from(config).age_net == AgeNet::classification_only);
  config.set("loss.lambda_age", "0.4");
  CHECK(TrainConfig::from(config).weights.lambda_age == 0.4);
  Config plain;
  CHECK(TrainConfig::from(plain).weights.lambda_age == 0.4);

  // a reloaded snapshot keeps the implied weight
  Config cls;
  cls.set("train.age_net", "classification_only");
  Config reloaded;
  reloaded.merge(resolve_train_config(cls).values());
  CHECK(reloaded.get<double>("loss.lambda_age") == 8.0);
  CHECK(TrainConfig::from(reloaded).weights.lambda_age == 8.0);
  CHECK(resolve_train_config(plain).get<double>("loss.lambda_age") == 0.4);
}

TEST_CASE("train config validation") {
  Config c;
  auto defaults = TrainConfig::from(c);
  CHECK(defaults.max_iterations == 2000);
  CHECK(defaults.batch_size == 12);
  CHECK(defaults.lr_G == 1e-4);
  CHECK(defaults.adam_beta1 == 0.5);
  CHECK(defaults.adam_beta2 == 0.99);
  CHECK(defaults.checkpoint_every == 500);
  for (auto [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"train.max_iterations", "0"}, {"train.batch_size", "-1"}, {"train.lr_G", "0"},
           {"train.mode", "gan"}, {"train.direction", "sideways"}, {"loss.alpha_ssim", "1.5"}}) {
    Config bad;
    bad.set(key, value);
    CHECK_THROWS_AS(TrainConfig::from(bad), ConfigError);
  }
  CHECK_THROWS_AS(c.set("train.nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("train.max_iterations", "1.5"), ConfigError);
  CHECK_THROWS_AS(c.set("train.max_iterations", "many"), ConfigError);
}

TEST_CASE("pretraining on constant images cannot beat the age spread") {
  TempDir dir;
  std::vector<testing::Row> rows;
  for (int i = 0; i < 16; ++i) rows.push_back({"p" + std::to_string(i), 20 + 3 * i, i < 12 ? "train" : "test"});
  testing::write_dataset(dir.path(), rows, 64);
  for (std::size_t i = 0; i < rows.size(); ++i) testing::write_solid_png(dir / ("images/" + std::to_string(i) + ".png"), 64, 128);
  auto data = FaceDataset::open(dir.path(), 64, AgeGroupPartition());
  AgePretrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 6;
  cfg.lr = 1e-3;
  PretrainReport report;
  auto est = pretrain_age_estimator(data, cfg, tiny_estimator(), &report);
  // the best constant predictor of ages 20..53 (train) has MAE 9 on train
  CHECK(report.train_mae >= 9.0 - 1e-6);
  CHECK(report.epoch_loss.size() == 3);

  auto path = dir / "est.pt";
  save_age_estimator(est, path, age_estimator_meta(est, data.partition(), report));
  auto loaded = load_age_estimator(path);
  auto x = data.batch(data.indices(Split::test));
  torch::NoGradGuard guard;
  CHECK(torch::equal(est->forward(x).age_logits, loaded->forward(x).age_logits));
  CHECK(read_checkpoint_meta(path)["val_mae"].get<double>() == report.val_mae);
  CHECK_THROWS_AS(load_age_estimator(dir / "missing.pt"), ConfigError);
}

TEST_CASE("sequential conditional evaluation makes t - s generator calls") {
  torch::manual_seed(2);
  auto g = std::make_shared<Generator>(TrainMode::cgan_single, 4, tiny_generator());
  SequentialConditionalModel seq(g);
  auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
  seq.transform(x, 1, 4);
  CHECK(seq.calls() == 3);
  seq.transform(x, 2, 3);
  CHECK(seq.calls() == 4);
  CHECK(torch::equal(seq.transform(x, 3, 3), x));
  CHECK(seq.calls() == 4);
  GeneratorModel single(g);
  single.transform(x, 1, 4);
  CHECK(single.calls() == 1);
  CHECK_THROWS_AS(single.transform(x, 3, 2), std::invalid_argument);
  auto y = single.transform(x, 1, 4);
  CHECK(y.max().item<float>() <= 1.0f);
  CHECK(y.min().item<float>() >= -1.0f);
  auto progressive = std::make_shared<Generator>(TrainMode::pfa_end_to_end, 4, tiny_generator());
  CHECK_THROWS_AS(SequentialConditionalModel{progressive}, ConfigError);
}

TEST_CASE("train() writes the run layout and keeps the last checkpoints") {
  Fixture f;
  TempDir run("pfa_run");
  auto est_path = f.dir / "est.pt";
  AgeEstimator est(4, tiny_estimator());
  est->freeze();
  save_age_estimator(est, est_path, age_estimator_meta(est, f.data.partition(), PretrainReport{}));

  Config config;
  config.set("data.root", f.dir.path().string());
  config.set("train.age_checkpoint", est_path.string());
  config.set("eval.oracle_checkpoint", est_path.string());
  config.set("train.max_iterations", "5");
  config.set("train.batch_size", "2");
  config.set("train.checkpoint_every", "1");
  config.set("train.keep_last", "2");
  config.set_json("generator.widths", {4, 6, 8});
  config.set("generator.res_blocks", "1");
  config.set("generator.outer_kernel", "3");
  std::ostringstream log;
  auto result = train(config, run.path() / "r", log);
  CHECK(result.iterations == 5);
  const auto dir = run.path() / "r";
  CHECK(std::filesystem::exists(dir / "config.snapshot"));
  CHECK(std::filesystem::exists(dir / "eval/report.json"));
  CHECK(std::filesystem::exists(dir / "eval/report.csv"));
  CHECK(std::filesystem::exists(dir / "checkpoints/iter_000005/generator.pt"));
  CHECK(std::filesystem::exists(dir / "checkpoints/iter_000004/discriminator.pt"));
  int kept = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "checkpoints")) kept += e.is_directory();
  CHECK(kept >= 2);
  CHECK(kept <= 3);
  REQUIRE(result.best_checkpoint.has_value());
  CHECK(std::filesystem::exists(*result.best_checkpoint / "generator.pt"));

  std::ifstream losses(dir / "losses.csv");
  std::string line;
  std::getline(losses, line);
  CHECK(line == "iteration,d_loss,adv,age,pixel,ssim,feature,identity,total");
  int expected = 1;
  while (std::getline(losses, line)) CHECK(std::stoi(line.substr(0, line.find(','))) == expected++);
  CHECK(expected == 6);

  auto loaded = load_generator(dir / "checkpoints/iter_000005");
  CHECK(loaded.meta["iteration"] == 5);
  CHECK(loaded.generator->mode() == TrainMode::pfa_end_to_end);
  CHECK(loaded.image_size == 64);

  config.set("train.age_checkpoint", (f.dir / "absent.pt").string());
  CHECK_THROWS_AS(train(config, run.path() / "r2", log), ConfigError);
}

TEST_CASE("evaluation report is complete and repeatable") {
  Fixture f;
  torch::manual_seed(4);
  auto g = std::make_shared<Generator>(TrainMode::pfa_end_to_end, 4, tiny_generator());
  AgeEstimator oracle(4, tiny_estimator());
  oracle->freeze();
  IdentityEmbedder embedder(tiny_features());
  EvalOptions options;
  options.montage_faces = 2;
  GeneratorModel model(g);
  auto a = evaluate(model, f.data, oracle, embedder, options);
  auto b = evaluate(model, f.data, oracle, embedder, options);
  CHECK(a.report.dump() == b.report.dump());
  const auto& r = a.report;
  for (const char* key : {"age_estimation_error", "pcc", "inception_score", "identity", "real_mean_age", "fake_mean_age"}) {
    CHECK(r.contains(key));
  }
  CHECK(r["age_estimation_error"].size() == 3);
  CHECK(r["identity"]["verification_rate"].size() == 3);
  CHECK(r["inception_score"]["mean"].get<double>() >= 1.0);
  CHECK(a.montage.size() == std::min<std::size_t>(2, r["faces"].get<std::size_t>()));
  CHECK(a.montage[0].size() == 4);
  auto csv = report_csv(r);
  CHECK(csv.rfind("metric,group,value\n", 0) == 0);
  CHECK(csv.find("pcc,,") != std::string::npos);
}

TEST_CASE("identity pretraining fits the training identities and returns a frozen stack") {
  Fixture f;
  IdentityPretrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.seed = 11;
  IdentityPretrainReport report;
  auto features = pretrain_identity_features(f.data, cfg, tiny_features(), &report);
  std::set<std::string> ids;
  for (auto i : f.data.indices(Split::train)) ids.insert(f.data.records()[i].identity_id);
  CHECK(report.identities == static_cast<int>(ids.size()));
  REQUIRE(report.epoch_loss.size() == 6);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  for (const auto& p : features->parameters()) CHECK_FALSE(p.requires_grad());
  CHECK_FALSE(features->is_training());

  cfg.epochs = 0;
  CHECK_THROWS_AS(pretrain_identity_features(f.data, cfg, tiny_features()), ConfigError);
}
