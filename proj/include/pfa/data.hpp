#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pfa/core.hpp"

namespace pfa {

enum class Split { train, test };

std::string to_string(Split s);

struct FaceRecord {
  std::string image_path;  // relative to the dataset root
  std::string identity_id;
  int age = 0;
  int group = 0;  // natural (young-to-old) group index
  Split split = Split::train;
};

struct IngestOptions {
  std::uint64_t seed = 0;
  double train_fraction = 0.8;  // identity-level, used when the manifest has no split column
};

// Reads `manifest` (CSV header id,image,age[,split]); image paths resolve
// against `root`. Throws DataError on a missing manifest or image, an
// unparseable age, an empty manifest or an identity present in both splits.
std::vector<FaceRecord> ingest(const std::filesystem::path& manifest, const std::filesystem::path& root,
                               const AgeGroupPartition& partition, const IngestOptions& options = {});

// Decodes, center-crops, resizes and maps [0, 255] linearly onto [-1, 1].
// Shape (3, size, size). Throws DataError when the file cannot be decoded.
torch::Tensor load_normalized(const FaceRecord& record, const std::filesystem::path& root, int size);

// All decodable records held in memory as uint8. Undecodable images are
// skipped with a warning and counted.
class FaceDataset {
 public:
  FaceDataset(std::vector<FaceRecord> records, std::filesystem::path root, int size, AgeGroupPartition partition);

  static FaceDataset open(const std::filesystem::path& root, int size, const AgeGroupPartition& partition,
                          const IngestOptions& options = {});

  const std::vector<FaceRecord>& records() const { return records_; }
  const AgeGroupPartition& partition() const { return partition_; }
  const std::filesystem::path& root() const { return root_; }
  int size() const { return size_; }
  std::size_t skipped() const { return skipped_; }

  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, int natural_group) const;

  // Normalized float image (3, size, size).
  torch::Tensor image(std::size_t index) const;
  // Stacked batch (b, 3, size, size).
  torch::Tensor batch(const std::vector<std::size_t>& indices) const;

  double mean_age(Split split, int natural_group) const;

 private:
  std::vector<FaceRecord> records_;
  std::vector<torch::Tensor> pixels_;
  std::filesystem::path root_;
  int size_;
  AgeGroupPartition partition_;
  std::size_t skipped_ = 0;
};

enum class TargetAge { group_mean, group_midpoint };
TargetAge parse_target_age(const std::string& name);
std::string to_string(TargetAge t);

// Group indices here are model indices (see model_group): for rejuvenation
// the oldest natural group is model group 1.
struct PairSample {
  std::size_t record = 0;
  int source = 0;
  int target = 0;
  double target_age = 0.0;
};

struct PairBatch {
  torch::Tensor images;  // (b, 3, h, w)
  std::vector<int> source;
  std::vector<int> target;  // model groups
  std::vector<int> target_natural;
  torch::Tensor target_age;  // (b)

  std::vector<GateVector> gates(int group_count) const;
};

struct RealBatch {
  torch::Tensor images;
  std::vector<int> groups;  // model groups
};

class PairSampler {
 public:
  // `adjacent_only` restricts targets to t = s + 1 (independent training).
  PairSampler(const FaceDataset& data, Direction direction, TargetAge target_age = TargetAge::group_mean,
              bool adjacent_only = false);

  int group_count() const { return group_count_; }
  Direction direction() const { return direction_; }

  // s uniform on 1..N-1, t uniform on s+1..N (or s+1), face uniform in s.
  PairSample sample(std::mt19937_64& rng) const;
  // Group uniform on 1..N, face uniform in it.
  std::pair<std::size_t, int> sample_real(std::mt19937_64& rng) const;

  double target_age(int model_group) const;

  PairBatch pair_batch(std::mt19937_64& rng, int batch_size, bool flip) const;
  RealBatch real_batch(std::mt19937_64& rng, int batch_size, bool flip) const;

 private:
  const FaceDataset* data_;
  Direction direction_;
  bool adjacent_only_;
  int group_count_;
  std::vector<std::vector<std::size_t>> by_model_group_;
  std::vector<double> target_ages_;
};

}  // namespace pfa
