#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <variant>

#include <json.hpp>
#include <torch/torch.h>

#include "pfa/config.hpp"
#include "pfa/data.hpp"
#include "pfa/features.hpp"
#include "pfa/losses.hpp"
#include "pfa/networks.hpp"

namespace pfa {

enum class TrainMode { pfa_end_to_end, pfa_independent, cgan_single };
TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode m);

struct AgePretrainConfig {
  int epochs = 50;
  int batch_size = 128;
  double lr = 1e-4;
  double lr_decay = 0.7;
  int decay_every = 15;
  std::uint64_t seed = 0;
  bool flip = true;

  static AgePretrainConfig from(const Config& config);
  void validate() const;
};

struct PretrainReport {
  double train_mae = 0.0;
  double val_mae = 0.0;
  int epochs = 0;
  std::vector<double> epoch_loss;
};

// Mean absolute error of the DEX age over `indices`.
double age_mae(AgeEstimator& estimator, const FaceDataset& data, const std::vector<std::size_t>& indices,
               int batch_size = 64);

// Minimizes the age loss on real training faces (true age, natural group).
// Validation MAE comes from the test split when it is non-empty. Throws
// NumericalError when the loss stops being finite.
AgeEstimator pretrain_age_estimator(const FaceDataset& data, const AgePretrainConfig& cfg,
                                    AgeEstimatorOptions options, PretrainReport* report = nullptr,
                                    std::ostream* log = nullptr);

nlohmann::json age_estimator_meta(const AgeEstimator& estimator, const AgeGroupPartition& partition,
                                  const PretrainReport& report);
void save_age_estimator(AgeEstimator& estimator, const std::filesystem::path& path, const nlohmann::json& meta);
// Rebuilds the estimator from its checkpoint metadata and freezes it.
AgeEstimator load_age_estimator(const std::filesystem::path& path);

struct IdentityPretrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool flip = true;

  static IdentityPretrainConfig from(const Config& config);
  void validate() const;
};

struct IdentityPretrainReport {
  int identities = 0;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

// Trains the conv stack, through a temporary linear head, to classify the
// training identities from standardized images; returns it frozen.
FeatureExtractor pretrain_identity_features(const FaceDataset& data, const IdentityPretrainConfig& cfg,
                                            FeatureExtractorOptions options, IdentityPretrainReport* report = nullptr,
                                            std::ostream* log = nullptr);

// Embedder options from the config: seeded random features, or the
// identity-trained stack when embedder.checkpoint is set.
FeatureExtractorOptions embedder_options(const Config& config);

struct TrainConfig {
  int max_iterations = 2000;
  int batch_size = 12;
  double lr_G = 1e-4;
  double lr_D = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.99;
  TrainMode mode = TrainMode::pfa_end_to_end;
  AgeNet age_net = AgeNet::dex_multitask;
  Direction direction = Direction::aging;
  TargetAge target_age = TargetAge::group_mean;
  int d_steps_per_g = 1;
  int checkpoint_every = 500;
  int keep_last = 3;
  int probe_faces = 32;
  std::uint64_t seed = 0;
  bool flip = true;
  std::filesystem::path age_checkpoint;
  LossWeights weights;
  AgeReduction age_reduction = AgeReduction::mean_abs;
  SubGeneratorOptions generator;
  FeatureExtractorOptions features;

  // classification_only raises lambda_age to 8 unless the key was set.
  static TrainConfig from(const Config& config);
  void validate() const;
};

// The trainable image-to-image model in any of the three modes. Group
// indices are model indices (see model_group).
class Generator {
 public:
  Generator(TrainMode mode, int group_count, SubGeneratorOptions options);

  TrainMode mode() const { return mode_; }
  int group_count() const { return group_count_; }
  const SubGeneratorOptions& options() const { return options_; }
  torch::nn::Module& module();
  std::vector<torch::Tensor> parameters();

  // Per-sample source/target. In pfa_independent mode every pair must be
  // adjacent and the input is detached.
  torch::Tensor forward(const torch::Tensor& x, const std::vector<int>& source, const std::vector<int>& target);

  ProgressiveGenerator& progressive();
  ConditionalGenerator& conditional();

  void train(bool on);

 private:
  TrainMode mode_;
  int group_count_;
  SubGeneratorOptions options_;
  ProgressiveGenerator progressive_{nullptr};
  ConditionalGenerator conditional_{nullptr};
};

nlohmann::json generator_meta(const Generator& g, int image_size, Direction direction,
                              const AgeGroupPartition& partition, int iteration);
void save_generator(Generator& g, const std::filesystem::path& path, const nlohmann::json& meta);

struct LoadedGenerator {
  std::shared_ptr<Generator> generator;
  nlohmann::json meta;
  Direction direction = Direction::aging;
  AgeGroupPartition partition;
  int image_size = 64;
};
LoadedGenerator load_generator(const std::filesystem::path& path);

class Trainer {
 public:
  Trainer(TrainConfig config, const FaceDataset& data, AgeEstimator estimator, FeatureExtractor phi);

  // One discriminator update then one generator update.
  LossReport train_step(const PairBatch& pairs, const RealBatch& real);
  // Samples fresh batches from the trainer's seeded stream and trains.
  LossReport step();

  Generator& generator() { return *generator_; }
  PatchDiscriminator& discriminator() { return discriminator_; }
  AgeEstimator& estimator() { return estimator_; }
  const PairSampler& sampler() const { return sampler_; }
  const TrainConfig& config() const { return config_; }
  int iteration() const { return iteration_; }

 private:
  void discriminator_update(const torch::Tensor& fake, const std::vector<int>& fake_groups, const RealBatch& real,
                            LossReport& report);

  TrainConfig config_;
  const FaceDataset* data_;
  PairSampler sampler_;
  std::mt19937_64 rng_;
  std::shared_ptr<Generator> generator_;
  PatchDiscriminator discriminator_{nullptr};
  AgeEstimator estimator_;
  FeatureExtractor phi_;
  std::unique_ptr<torch::optim::Adam> g_opt_, d_opt_;
  int iteration_ = 0;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path last_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
  int iterations = 0;
  LossReport last;
};

// Writes implied values into the config: classification_only training uses
// lambda_age = 8 unless loss.lambda_age was given.
Config resolve_train_config(Config config);

// Full run: config.snapshot, losses.csv, checkpoints/iter_XXXXXX/ (last
// `keep_last` plus the best probe-PCC one) and eval/ when enabled.
TrainResult train(const Config& config, const std::filesystem::path& run_dir, std::ostream& log);

}  // namespace pfa
