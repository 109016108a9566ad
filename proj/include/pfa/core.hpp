#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace pfa {

// Error classes mapped onto CLI exit codes (2, 3, 4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ordered, disjoint age intervals. Group indices are 1-based; a cut age
// belongs to the lower group, so bounds {30, 40, 50} give 30-, 31-40,
// 41-50 and 51+.
class AgeGroupPartition {
 public:
  AgeGroupPartition();
  explicit AgeGroupPartition(std::vector<int> bounds);

  int group_count() const { return static_cast<int>(bounds_.size()) + 1; }
  const std::vector<int>& bounds() const { return bounds_; }

  int group_of(int age) const;
  // Fractional ages (estimator output) are rounded half-up first.
  int group_of(double age) const;

  // Inclusive lower age of a group (0 for group 1).
  int lower_age(int group) const;
  // Inclusive upper age, or -1 for the open-ended last group.
  int upper_age(int group) const;
  std::string label(int group) const;

 private:
  std::vector<int> bounds_;
};

enum class Direction { aging, rejuvenation };

Direction parse_direction(const std::string& name);
std::string to_string(Direction d);

// Maps a natural (young-to-old) group index to the index the generator
// sees. Rejuvenation reverses the order; gates still run ascending.
int model_group(int natural_group, int group_count, Direction d);
int natural_group(int model_group, int group_count, Direction d);

// Binary gates selecting which sub-generators participate.
class GateVector {
 public:
  GateVector() = default;
  explicit GateVector(std::vector<std::uint8_t> gates);

  std::size_t size() const { return gates_.size(); }
  std::uint8_t operator[](std::size_t i) const { return gates_.at(i); }
  const std::vector<std::uint8_t>& values() const { return gates_; }

  int engaged() const;
  bool none() const { return engaged() == 0; }
  // All ones sit in one unbroken run (the empty vector counts).
  bool contiguous() const;

  bool operator==(const GateVector&) const = default;

 private:
  std::vector<std::uint8_t> gates_;
};

// Element i (1-based) is 1 iff s <= i < t.
GateVector build_gates(int source, int target, int group_count);

// One-hot condition planes: shape (N, h, w), channel t-1 all ones.
torch::Tensor build_condition(int target, int group_count, int64_t height, int64_t width,
                              torch::TensorOptions options = torch::kFloat);

// Batched version: shape (b, N, h, w).
torch::Tensor build_condition_batch(const std::vector<int>& targets, int group_count,
                                    int64_t height, int64_t width,
                                    torch::TensorOptions options = torch::kFloat);

}  // namespace pfa
