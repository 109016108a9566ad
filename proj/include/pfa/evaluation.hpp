#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "pfa/data.hpp"
#include "pfa/features.hpp"
#include "pfa/networks.hpp"
#include "pfa/training.hpp"

namespace pfa {

// Something that ages a batch from one model group to a later one. Outputs
// are clipped to [-1, 1].
class AgingModel {
 public:
  virtual ~AgingModel() = default;
  virtual int group_count() const = 0;
  virtual std::string name() const = 0;
  torch::Tensor transform(const torch::Tensor& x, int source, int target);
  // Generator invocations so far.
  int calls() const { return calls_; }

 protected:
  virtual torch::Tensor run(const torch::Tensor& x, int source, int target) = 0;
  int calls_ = 0;
};

// Progressive chain (end-to-end or independently trained) or a
// single-shot conditional generator.
class GeneratorModel : public AgingModel {
 public:
  explicit GeneratorModel(std::shared_ptr<Generator> g) : g_(std::move(g)) {}
  int group_count() const override { return g_->group_count(); }
  std::string name() const override { return to_string(g_->mode()); }

 protected:
  torch::Tensor run(const torch::Tensor& x, int source, int target) override;

 private:
  std::shared_ptr<Generator> g_;
};

// Applies a conditional generator one group at a time: t - s calls.
class SequentialConditionalModel : public AgingModel {
 public:
  explicit SequentialConditionalModel(std::shared_ptr<Generator> g);
  int group_count() const override { return g_->group_count(); }
  std::string name() const override { return "sequential_cgan"; }

 protected:
  torch::Tensor run(const torch::Tensor& x, int source, int target) override;

 private:
  std::shared_ptr<Generator> g_;
};

struct EvalOptions {
  Direction direction = Direction::aging;
  int max_faces = 0;  // 0: every source face in the test split
  int is_splits = 10;
  double far = 1e-3;
  int batch_size = 32;
  int montage_faces = 8;
  std::string checkpoint_id;
  std::string config_hash;
  bool oracle_independent = true;
};

struct EvalResult {
  nlohmann::json report;
  std::vector<std::vector<torch::Tensor>> montage;  // input then one output per target
  std::vector<std::string> montage_labels;
};

// Age-estimation error and identity preservation per target group, PCC
// and inception score, from source faces of model group 1 in the test
// split.
EvalResult evaluate(AgingModel& model, const FaceDataset& data, AgeEstimator& oracle, IdentityEmbedder& embedder,
                    const EvalOptions& options);

// PCC of model-group-1 test faces against real test group means, scored
// with `estimator`.
double probe_pcc(AgingModel& model, const FaceDataset& data, AgeEstimator& estimator, Direction direction,
                 int max_faces, int batch_size = 32);

// report.json, report.csv and montage.png under `dir`.
void write_report(const EvalResult& result, const std::filesystem::path& dir);

// Flat metric,group,value rows.
std::string report_csv(const nlohmann::json& report);

}  // namespace pfa
