#include "pfa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <iostream>
#include <sstream>

#include "pfa/checkpoint.hpp"
#include "pfa/evaluation.hpp"

namespace pfa {

namespace fs = std::filesystem;

TrainMode parse_train_mode(const std::string& name) {
  if (name == "pfa_end_to_end") return TrainMode::pfa_end_to_end;
  if (name == "pfa_independent") return TrainMode::pfa_independent;
  if (name == "cgan_single") return TrainMode::cgan_single;
  throw ConfigError("unknown train.mode '" + name + "' (expected pfa_end_to_end|pfa_independent|cgan_single)");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::pfa_end_to_end: return "pfa_end_to_end";
    case TrainMode::pfa_independent: return "pfa_independent";
    case TrainMode::cgan_single: return "cgan_single";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// age estimator pretraining

AgePretrainConfig AgePretrainConfig::from(const Config& config) {
  AgePretrainConfig c;
  c.epochs = config.get<int>("pretrain.epochs");
  c.batch_size = config.get<int>("pretrain.batch_size");
  c.lr = config.get<double>("pretrain.lr");
  c.lr_decay = config.get<double>("pretrain.lr_decay");
  c.decay_every = config.get<int>("pretrain.decay_every");
  c.seed = config.get<std::uint64_t>("pretrain.seed");
  c.flip = config.get<bool>("data.flip");
  c.validate();
  return c;
}

void AgePretrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("pretrain.epochs must be positive");
  if (batch_size < 2) throw ConfigError("pretrain.batch_size must be at least 2");
  if (!(lr > 0)) throw ConfigError("pretrain.lr must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("pretrain.lr_decay must be in (0, 1]");
  if (decay_every < 1) throw ConfigError("pretrain.decay_every must be positive");
}

double age_mae(AgeEstimator& estimator, const FaceDataset& data, const std::vector<std::size_t>& indices,
               int batch_size) {
  if (indices.empty()) throw std::invalid_argument("age MAE needs at least one face");
  torch::NoGradGuard guard;
  const bool was_training = estimator->is_training();
  estimator->eval();
  double sum = 0.0;
  for (std::size_t begin = 0; begin < indices.size(); begin += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(indices.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                   indices.begin() + static_cast<std::ptrdiff_t>(end));
    auto predicted = estimator->forward(data.batch(chunk)).expected_age.to(torch::kDouble);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      sum += std::abs(predicted[static_cast<int64_t>(i)].item<double>() - data.records()[chunk[i]].age);
    }
  }
  estimator->train(was_training);
  return sum / static_cast<double>(indices.size());
}

AgeEstimator pretrain_age_estimator(const FaceDataset& data, const AgePretrainConfig& cfg,
                                    AgeEstimatorOptions options, PretrainReport* report, std::ostream* log) {
  cfg.validate();
  auto train_idx = data.indices(Split::train);
  if (train_idx.empty()) throw DataError("no training faces for age estimator pretraining");
  options.image_size = data.size();
  torch::manual_seed(cfg.seed);
  AgeEstimator estimator(data.partition().group_count(), options);
  estimator->train();
  torch::optim::Adam opt(estimator->parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(cfg.seed);
  PretrainReport local;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, (epoch - 1) / cfg.decay_every);
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      if (end - begin < 2) break;  // batch norm needs two samples
      std::vector<torch::Tensor> images;
      std::vector<double> ages;
      std::vector<int> groups;
      for (auto k = begin; k < end; ++k) {
        const auto i = train_idx[k];
        auto img = data.image(i);
        if (cfg.flip && std::bernoulli_distribution(0.5)(rng)) img = img.flip({2});
        images.push_back(img);
        ages.push_back(data.records()[i].age);
        groups.push_back(data.records()[i].group);
      }
      auto loss = age_loss(estimator->forward(torch::stack(images)), torch::tensor(ages, torch::kFloat), groups).total;
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw NumericalError("age estimator loss became non-finite at epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      epoch_loss += value;
      ++steps;
    }
    local.epoch_loss.push_back(steps > 0 ? epoch_loss / steps : 0.0);
    if (log) *log << "pretrain epoch " << epoch << "/" << cfg.epochs << " loss " << local.epoch_loss.back() << std::endl;
  }
  estimator->freeze();
  local.epochs = cfg.epochs;
  local.train_mae = age_mae(estimator, data, data.indices(Split::train));
  const auto test_idx = data.indices(Split::test);
  local.val_mae = test_idx.empty() ? local.train_mae : age_mae(estimator, data, test_idx);
  if (log) *log << "pretrain train MAE " << local.train_mae << " validation MAE " << local.val_mae << std::endl;
  if (report) *report = local;
  return estimator;
}

nlohmann::json age_estimator_meta(const AgeEstimator& estimator, const AgeGroupPartition& partition,
                                  const PretrainReport& report) {
  return {{"kind", "age_estimator"},
          {"group_count", estimator->group_count()},
          {"bounds", partition.bounds()},
          {"options", estimator->options().to_json()},
          {"epochs", report.epochs},
          {"train_mae", report.train_mae},
          {"val_mae", report.val_mae}};
}

void save_age_estimator(AgeEstimator& estimator, const fs::path& path, const nlohmann::json& meta) {
  save_checkpoint(*estimator, path, meta);
}

AgeEstimator load_age_estimator(const fs::path& path) {
  if (path.empty() || !fs::exists(path)) throw ConfigError("age estimator checkpoint not found: '" + path.string() + "'");
  auto meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "age_estimator") throw ConfigError(path.string() + " is not an age estimator checkpoint");
  AgeEstimator estimator(meta.at("group_count").get<int>(), AgeEstimatorOptions::from_json(meta.at("options")));
  load_checkpoint(*estimator, path);
  estimator->freeze();
  return estimator;
}

// ---------------------------------------------------------------------------
// identity features

IdentityPretrainConfig IdentityPretrainConfig::from(const Config& config) {
  IdentityPretrainConfig c;
  c.epochs = config.get<int>("embedder.epochs");
  c.batch_size = config.get<int>("embedder.batch_size");
  c.lr = config.get<double>("embedder.lr");
  c.seed = config.get<std::uint64_t>("embedder.seed");
  c.flip = config.get<bool>("data.flip");
  c.validate();
  return c;
}

void IdentityPretrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("embedder.epochs must be positive");
  if (batch_size < 1) throw ConfigError("embedder.batch_size must be positive");
  if (!(lr > 0)) throw ConfigError("embedder.lr must be positive");
}

FeatureExtractor pretrain_identity_features(const FaceDataset& data, const IdentityPretrainConfig& cfg,
                                            FeatureExtractorOptions options, IdentityPretrainReport* report,
                                            std::ostream* log) {
  cfg.validate();
  auto train_idx = data.indices(Split::train);
  std::map<std::string, int64_t> label_of;
  for (auto i : train_idx) label_of.emplace(data.records()[i].identity_id, 0);
  if (label_of.size() < 2) throw DataError("identity pretraining needs at least two training identities");
  int64_t next = 0;
  for (auto& [id, label] : label_of) label = next++;

  options.seed = cfg.seed;
  options.checkpoint.clear();
  FeatureExtractor features(options);
  for (auto& p : features->parameters()) p.requires_grad_(true);
  features->train();
  int64_t flat = 0;
  {
    torch::NoGradGuard guard;
    flat = features->forward(torch::zeros({1, 3, data.size(), data.size()})).numel();
  }
  torch::manual_seed(cfg.seed);
  torch::nn::Linear head(flat, static_cast<int64_t>(label_of.size()));
  auto params = features->parameters();
  for (const auto& p : head->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(cfg.seed);
  IdentityPretrainReport local;
  local.identities = static_cast<int>(label_of.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double total = 0.0;
    int64_t correct = 0;
    int steps = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<torch::Tensor> images;
      std::vector<int64_t> labels;
      for (auto k = begin; k < end; ++k) {
        auto img = data.image(train_idx[k]);
        if (cfg.flip && std::bernoulli_distribution(0.5)(rng)) img = img.flip({2});
        images.push_back(img);
        labels.push_back(label_of.at(data.records()[train_idx[k]].identity_id));
      }
      auto target = torch::tensor(labels, torch::kLong);
      auto logits = head(features->forward(standardize_images(torch::stack(images))).flatten(1));
      auto loss = torch::nn::functional::cross_entropy(logits, target);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw NumericalError("identity loss became non-finite at epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += value;
      correct += logits.argmax(1).eq(target).sum().item<int64_t>();
      ++steps;
    }
    local.epoch_loss.push_back(total / steps);
    local.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    if (log) {
      *log << "identity epoch " << epoch << "/" << cfg.epochs << " loss " << local.epoch_loss.back() << " accuracy "
           << local.train_accuracy << std::endl;
    }
  }
  features->eval();
  for (auto& p : features->parameters()) p.requires_grad_(false);
  if (report) *report = local;
  return features;
}

FeatureExtractorOptions embedder_options(const Config& config) {
  FeatureExtractorOptions o;
  o.seed = config.get<std::uint64_t>("embedder.seed");
  o.checkpoint = config.get<std::string>("embedder.checkpoint");
  if (!o.checkpoint.empty() && !fs::exists(o.checkpoint)) {
    throw ConfigError("identity feature checkpoint not found: " + o.checkpoint);
  }
  return o;
}

// ---------------------------------------------------------------------------
// configuration

Config resolve_train_config(Config config) {
  if (parse_age_net(config.get<std::string>("train.age_net")) == AgeNet::classification_only &&
      !config.is_explicit("loss.lambda_age")) {
    config.set_json("loss.lambda_age", 8.0);
  }
  return config;
}

TrainConfig TrainConfig::from(const Config& config) {
  TrainConfig c;
  c.max_iterations = config.get<int>("train.max_iterations");
  c.batch_size = config.get<int>("train.batch_size");
  c.lr_G = config.get<double>("train.lr_G");
  c.lr_D = config.get<double>("train.lr_D");
  c.adam_beta1 = config.get<double>("train.adam_beta1");
  c.adam_beta2 = config.get<double>("train.adam_beta2");
  c.mode = parse_train_mode(config.get<std::string>("train.mode"));
  c.age_net = parse_age_net(config.get<std::string>("train.age_net"));
  c.direction = parse_direction(config.get<std::string>("train.direction"));
  c.target_age = parse_target_age(config.get<std::string>("train.target_age"));
  c.d_steps_per_g = config.get<int>("train.d_steps_per_g");
  c.checkpoint_every = config.get<int>("train.checkpoint_every");
  c.keep_last = config.get<int>("train.keep_last");
  c.probe_faces = config.get<int>("train.probe_faces");
  c.seed = config.get<std::uint64_t>("train.seed");
  c.flip = config.get<bool>("data.flip");
  c.age_checkpoint = config.get<std::string>("train.age_checkpoint");
  c.weights.lambda_adv = config.get<double>("loss.lambda_adv");
  c.weights.lambda_age = config.get<double>("loss.lambda_age");
  c.weights.lambda_ide = config.get<double>("loss.lambda_ide");
  c.weights.alpha_ssim = config.get<double>("loss.alpha_ssim");
  c.weights.alpha_fea = config.get<double>("loss.alpha_fea");
  if (c.age_net == AgeNet::classification_only && !config.is_explicit("loss.lambda_age")) c.weights.lambda_age = 8.0;
  c.age_reduction = parse_age_reduction(config.get<std::string>("loss.age_reduction"));
  try {
    c.generator = SubGeneratorOptions::from_json(config.at("generator"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator options: ") + e.what());
  }
  c.features.seed = config.get<std::uint64_t>("features.seed");
  c.features.checkpoint = config.get<std::string>("features.checkpoint");
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("train.max_iterations must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(lr_G > 0) || !(lr_D > 0)) throw ConfigError("learning rates must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (d_steps_per_g < 1) throw ConfigError("train.d_steps_per_g must be positive");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be positive");
  if (keep_last < 1) throw ConfigError("train.keep_last must be positive");
  weights.validate();
}

// ---------------------------------------------------------------------------
// generator wrapper

Generator::Generator(TrainMode mode, int group_count, SubGeneratorOptions options)
    : mode_(mode), group_count_(group_count), options_(std::move(options)) {
  if (mode_ == TrainMode::cgan_single) {
    conditional_ = ConditionalGenerator(group_count_, options_);
  } else {
    progressive_ = ProgressiveGenerator(group_count_, options_);
  }
}

torch::nn::Module& Generator::module() {
  if (conditional_) return *conditional_;
  return *progressive_;
}

std::vector<torch::Tensor> Generator::parameters() { return module().parameters(); }

ProgressiveGenerator& Generator::progressive() {
  if (!progressive_) throw std::logic_error("generator is not progressive");
  return progressive_;
}

ConditionalGenerator& Generator::conditional() {
  if (!conditional_) throw std::logic_error("generator is not conditional");
  return conditional_;
}

void Generator::train(bool on) { module().train(on); }

torch::Tensor Generator::forward(const torch::Tensor& x, const std::vector<int>& source, const std::vector<int>& target) {
  if (source.size() != target.size() || static_cast<int64_t>(source.size()) != x.size(0)) {
    throw std::invalid_argument("one source and target group per sample required");
  }
  if (mode_ == TrainMode::cgan_single) return conditional_->forward(x, target);
  std::vector<GateVector> gates;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (mode_ == TrainMode::pfa_independent && target[i] != source[i] + 1) {
      throw std::invalid_argument("independent sub-generators train on adjacent groups only");
    }
    gates.push_back(build_gates(source[i], target[i], group_count_));
  }
  if (mode_ == TrainMode::pfa_independent) return progressive_->forward(x.detach(), gates);
  return progressive_->forward(x, gates);
}

nlohmann::json generator_meta(const Generator& g, int image_size, Direction direction,
                              const AgeGroupPartition& partition, int iteration) {
  return {{"kind", "generator"},
          {"mode", to_string(g.mode())},
          {"group_count", g.group_count()},
          {"image_size", image_size},
          {"direction", to_string(direction)},
          {"bounds", partition.bounds()},
          {"options", g.options().to_json()},
          {"iteration", iteration}};
}

void save_generator(Generator& g, const fs::path& path, const nlohmann::json& meta) {
  save_checkpoint(g.module(), path, meta);
}

LoadedGenerator load_generator(const fs::path& path) {
  auto file = fs::is_directory(path) ? path / "generator.pt" : path;
  if (!fs::exists(file)) throw ConfigError("generator checkpoint not found: " + file.string());
  LoadedGenerator out;
  out.meta = read_checkpoint_meta(file);
  if (out.meta.value("kind", "") != "generator") throw ConfigError(file.string() + " is not a generator checkpoint");
  auto options = SubGeneratorOptions::from_json(out.meta.at("options"));
  out.generator = std::make_shared<Generator>(parse_train_mode(out.meta.at("mode").get<std::string>()),
                                              out.meta.at("group_count").get<int>(), options);
  load_checkpoint(out.generator->module(), file);
  out.generator->train(false);
  for (auto& p : out.generator->parameters()) p.requires_grad_(false);
  out.direction = parse_direction(out.meta.at("direction").get<std::string>());
  out.partition = AgeGroupPartition(out.meta.at("bounds").get<std::vector<int>>());
  out.image_size = out.meta.at("image_size").get<int>();
  return out;
}

// ---------------------------------------------------------------------------
// adversarial training

Trainer::Trainer(TrainConfig config, const FaceDataset& data, AgeEstimator estimator, FeatureExtractor phi)
    : config_(std::move(config)),
      data_(&data),
      sampler_(data, config_.direction, config_.target_age, config_.mode == TrainMode::pfa_independent),
      rng_(config_.seed),
      estimator_(std::move(estimator)),
      phi_(std::move(phi)) {
  config_.validate();
  const int n = data.partition().group_count();
  if (estimator_->group_count() != n) {
    throw ConfigError("age estimator has " + std::to_string(estimator_->group_count()) + " groups, data has " +
                      std::to_string(n));
  }
  if (estimator_->options().image_size != data.size()) {
    throw ConfigError("age estimator was trained at " + std::to_string(estimator_->options().image_size) +
                      " pixels, data is " + std::to_string(data.size()));
  }
  estimator_->freeze();
  torch::manual_seed(config_.seed);
  generator_ = std::make_shared<Generator>(config_.mode, n, config_.generator);
  discriminator_ = PatchDiscriminator(n);
  auto adam = [&](double lr) {
    return torch::optim::AdamOptions(lr).betas({config_.adam_beta1, config_.adam_beta2});
  };
  g_opt_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam(config_.lr_G));
  d_opt_ = std::make_unique<torch::optim::Adam>(discriminator_->parameters(), adam(config_.lr_D));
}

void Trainer::discriminator_update(const torch::Tensor& fake, const std::vector<int>& fake_groups,
                                   const RealBatch& real, LossReport& report) {
  discriminator_->train();
  d_opt_->zero_grad();
  const auto size = real.images.size(2);
  auto real_scores = discriminator_->forward(real.images, discriminator_->condition_for(real.groups, size));
  auto fake_scores = discriminator_->forward(fake, discriminator_->condition_for(fake_groups, size));
  auto loss = adv_loss_D(real_scores, fake_scores);
  report.d_loss = loss.item<double>();
  if (!std::isfinite(report.d_loss)) {
    throw NumericalError("discriminator loss became non-finite at iteration " + std::to_string(iteration_ + 1));
  }
  loss.backward();
  d_opt_->step();
}

LossReport Trainer::train_step(const PairBatch& pairs, const RealBatch& real) {
  LossReport report;
  generator_->train(true);
  auto fake = generator_->forward(pairs.images, pairs.source, pairs.target);
  discriminator_update(fake.detach(), pairs.target, real, report);

  for (auto& p : discriminator_->parameters()) p.requires_grad_(false);
  g_opt_->zero_grad();
  auto scores = discriminator_->forward(fake, discriminator_->condition_for(pairs.target, fake.size(2)));
  auto adv = adv_loss_G(scores);
  AgeLossOptions age_options{config_.age_reduction, config_.age_net};
  auto age = age_loss(fake, pairs.target_age, pairs.target_natural, estimator_, age_options);
  auto ide = identity_loss(pairs.images, fake, phi_, config_.weights);
  auto total = total_G_loss(adv, age.total, ide.total, config_.weights);
  report.adv = adv.item<double>();
  report.age = age.total.item<double>();
  report.pixel = ide.pixel.item<double>();
  report.ssim = ide.ssim.item<double>();
  report.feature = ide.feature.item<double>();
  report.identity = ide.total.item<double>();
  report.total = total.item<double>();
  if (!report.finite()) {
    for (auto& p : discriminator_->parameters()) p.requires_grad_(true);
    throw NumericalError("generator loss became non-finite at iteration " + std::to_string(iteration_ + 1));
  }
  if (total.requires_grad()) {
    total.backward();
    g_opt_->step();
  }
  for (auto& p : discriminator_->parameters()) p.requires_grad_(true);
  ++iteration_;
  return report;
}

LossReport Trainer::step() {
  for (int k = 1; k < config_.d_steps_per_g; ++k) {
    auto pairs = sampler_.pair_batch(rng_, config_.batch_size, config_.flip);
    auto real = sampler_.real_batch(rng_, config_.batch_size, config_.flip);
    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = generator_->forward(pairs.images, pairs.source, pairs.target);
    }
    LossReport ignored;
    discriminator_update(fake, pairs.target, real, ignored);
  }
  auto pairs = sampler_.pair_batch(rng_, config_.batch_size, config_.flip);
  auto real = sampler_.real_batch(rng_, config_.batch_size, config_.flip);
  return train_step(pairs, real);
}

// ---------------------------------------------------------------------------
// orchestration

namespace {

std::string iteration_name(int iteration) {
  std::ostringstream os;
  os << "iter_" << std::setw(6) << std::setfill('0') << iteration;
  return os.str();
}

void prune_checkpoints(const fs::path& dir, int keep_last, const std::optional<fs::path>& best) {
  std::vector<fs::path> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("iter_", 0) == 0) found.push_back(entry.path());
  }
  std::sort(found.begin(), found.end());
  if (static_cast<int>(found.size()) <= keep_last) return;
  for (std::size_t i = 0; i + static_cast<std::size_t>(keep_last) < found.size(); ++i) {
    if (best && fs::equivalent(found[i], *best)) continue;
    fs::remove_all(found[i]);
  }
}

}  // namespace

TrainResult train(const Config& requested, const fs::path& run_dir, std::ostream& log) {
  const auto config = resolve_train_config(requested);
  auto cfg = TrainConfig::from(config);
  const auto partition = partition_from(config);
  IngestOptions ingest_options{config.get<std::uint64_t>("data.seed"), config.get<double>("data.train_fraction")};
  const int size = config.get<int>("data.size");
  auto estimator = load_age_estimator(cfg.age_checkpoint);
  if (estimator->group_count() != partition.group_count()) {
    throw ConfigError("age estimator group count does not match age_groups.bounds");
  }
  auto data = FaceDataset::open(config.get<std::string>("data.root"), size, partition, ingest_options);
  Trainer trainer(cfg, data, estimator, FeatureExtractor(cfg.features));

  const auto checkpoints = run_dir / "checkpoints";
  fs::create_directories(checkpoints);
  fs::create_directories(run_dir / "eval");
  std::ofstream(run_dir / "config.snapshot") << config.dump() << "\n";
  std::ofstream losses(run_dir / "losses.csv");
  losses << "iteration,d_loss,adv,age,pixel,ssim,feature,identity,total\n";
  losses << std::setprecision(17);

  TrainResult result;
  result.run_dir = run_dir;
  double best_pcc = -std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    LossReport r;
    try {
      r = trainer.step();
    } catch (const NumericalError& e) {
      const std::string last = result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string();
      throw NumericalError(std::string(e.what()) + " (last good checkpoint: " + last + ")");
    }
    losses << it << "," << r.d_loss << "," << r.adv << "," << r.age << "," << r.pixel << "," << r.ssim << ","
           << r.feature << "," << r.identity << "," << r.total << "\n";
    losses.flush();
    result.last = r;
    result.iterations = it;
    if (it % 50 == 0 || it == 1 || it == cfg.max_iterations) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << "iter " << it << "/" << cfg.max_iterations << " d " << r.d_loss << " adv " << r.adv << " age " << r.age
          << " ide " << r.identity << " total " << r.total << " (" << std::fixed << std::setprecision(1) << elapsed
          << "s)" << std::defaultfloat << std::setprecision(6) << std::endl;
    }
    if (it % cfg.checkpoint_every == 0 || it == cfg.max_iterations) {
      const auto dir = checkpoints / iteration_name(it);
      save_generator(trainer.generator(), dir / "generator.pt",
                     generator_meta(trainer.generator(), size, cfg.direction, partition, it));
      save_checkpoint(*trainer.discriminator(), dir / "discriminator.pt",
                      {{"kind", "discriminator"}, {"group_count", partition.group_count()}, {"iteration", it}});
      result.last_checkpoint = dir;
      try {
        GeneratorModel model(std::shared_ptr<Generator>(&trainer.generator(), [](Generator*) {}));
        const double pcc = probe_pcc(model, data, trainer.estimator(), cfg.direction, cfg.probe_faces);
        log << "checkpoint " << dir.filename().string() << " probe PCC " << pcc << std::endl;
        if (pcc > best_pcc) {
          best_pcc = pcc;
          result.best_checkpoint = dir;
          std::ofstream(checkpoints / "best.json") << nlohmann::json{{"iteration", it}, {"probe_pcc", pcc}}.dump(2)
                                                   << "\n";
        }
      } catch (const std::exception& e) {
        log << "warning: probe PCC unavailable: " << e.what() << std::endl;
      }
      prune_checkpoints(checkpoints, cfg.keep_last, result.best_checkpoint);
    }
  }

  if (config.get<bool>("train.evaluate")) {
    const auto oracle_path = config.get<std::string>("eval.oracle_checkpoint");
    EvalOptions options;
    options.direction = cfg.direction;
    options.max_faces = config.get<int>("eval.max_faces");
    options.is_splits = config.get<int>("eval.is_splits");
    options.far = config.get<double>("eval.far");
    options.batch_size = config.get<int>("eval.batch_size");
    options.montage_faces = config.get<int>("eval.montage_faces");
    options.checkpoint_id = result.last_checkpoint.filename().string();
    options.config_hash = config.hash();
    options.oracle_independent = !oracle_path.empty();
    AgeEstimator oracle = oracle_path.empty() ? trainer.estimator() : load_age_estimator(oracle_path);
    if (oracle_path.empty()) log << "warning: eval.oracle_checkpoint unset, scoring with the training estimator" << std::endl;
    IdentityEmbedder embedder(embedder_options(config));
    GeneratorModel model(std::shared_ptr<Generator>(&trainer.generator(), [](Generator*) {}));
    write_report(evaluate(model, data, oracle, embedder, options), run_dir / "eval");
    log << "evaluation written to " << (run_dir / "eval").string() << std::endl;
  }
  return result;
}

}  // namespace pfa
