#include "pfa/core.hpp"

#include <algorithm>
#include <cmath>

namespace pfa {

AgeGroupPartition::AgeGroupPartition() : AgeGroupPartition({30, 40, 50}) {}

AgeGroupPartition::AgeGroupPartition(std::vector<int> bounds) : bounds_(std::move(bounds)) {
  if (bounds_.empty()) throw std::invalid_argument("age partition needs at least one cut age");
  if (bounds_.front() < 0) throw std::invalid_argument("age partition cut ages must be non-negative");
  for (std::size_t i = 1; i < bounds_.size(); ++i) {
    if (bounds_[i] <= bounds_[i - 1])
      throw std::invalid_argument("age partition cut ages must be strictly increasing");
  }
}

int AgeGroupPartition::group_of(int age) const {
  if (age < 0) throw std::invalid_argument("age must be non-negative, got " + std::to_string(age));
  auto it = std::lower_bound(bounds_.begin(), bounds_.end(), age);
  return static_cast<int>(it - bounds_.begin()) + 1;
}

int AgeGroupPartition::group_of(double age) const {
  if (!(age >= 0.0)) throw std::invalid_argument("age must be non-negative");
  return group_of(static_cast<int>(std::floor(age + 0.5)));
}

int AgeGroupPartition::lower_age(int group) const {
  if (group < 1 || group > group_count()) throw std::invalid_argument("group index out of range");
  return group == 1 ? 0 : bounds_[group - 2] + 1;
}

int AgeGroupPartition::upper_age(int group) const {
  if (group < 1 || group > group_count()) throw std::invalid_argument("group index out of range");
  return group == group_count() ? -1 : bounds_[group - 1];
}

std::string AgeGroupPartition::label(int group) const {
  if (group == 1) return std::to_string(bounds_.front()) + "-";
  if (group == group_count()) return std::to_string(bounds_.back() + 1) + "+";
  return std::to_string(lower_age(group)) + "-" + std::to_string(upper_age(group));
}

Direction parse_direction(const std::string& name) {
  if (name == "aging") return Direction::aging;
  if (name == "rejuvenation") return Direction::rejuvenation;
  throw ConfigError("unknown direction '" + name + "' (expected aging|rejuvenation)");
}

std::string to_string(Direction d) { return d == Direction::aging ? "aging" : "rejuvenation"; }

int model_group(int natural, int group_count, Direction d) {
  if (natural < 1 || natural > group_count) throw std::invalid_argument("group index out of range");
  return d == Direction::aging ? natural : group_count + 1 - natural;
}

int natural_group(int model, int group_count, Direction d) {
  // The reversal is an involution.
  return model_group(model, group_count, d);
}

GateVector::GateVector(std::vector<std::uint8_t> gates) : gates_(std::move(gates)) {
  for (auto g : gates_) {
    if (g > 1) throw std::invalid_argument("gate values must be 0 or 1");
  }
}

int GateVector::engaged() const {
  return static_cast<int>(std::count(gates_.begin(), gates_.end(), std::uint8_t{1}));
}

bool GateVector::contiguous() const {
  auto first = std::find(gates_.begin(), gates_.end(), std::uint8_t{1});
  if (first == gates_.end()) return true;
  auto after = std::find(first, gates_.end(), std::uint8_t{0});
  return std::find(after, gates_.end(), std::uint8_t{1}) == gates_.end();
}

GateVector build_gates(int source, int target, int group_count) {
  if (group_count < 2) throw std::invalid_argument("need at least two age groups");
  if (source < 1 || target > group_count || source > target) {
    throw std::invalid_argument("gates require 1 <= s <= t <= N, got s=" + std::to_string(source) +
                                " t=" + std::to_string(target) + " N=" + std::to_string(group_count));
  }
  std::vector<std::uint8_t> gates(static_cast<std::size_t>(group_count - 1), 0);
  for (int i = source; i < target; ++i) gates[static_cast<std::size_t>(i - 1)] = 1;
  return GateVector(std::move(gates));
}

torch::Tensor build_condition(int target, int group_count, int64_t height, int64_t width,
                              torch::TensorOptions options) {
  if (target < 1 || target > group_count) {
    throw std::invalid_argument("condition target " + std::to_string(target) + " outside 1.." +
                                std::to_string(group_count));
  }
  auto c = torch::zeros({group_count, height, width}, options);
  c[target - 1].fill_(1.0);
  return c;
}

torch::Tensor build_condition_batch(const std::vector<int>& targets, int group_count,
                                    int64_t height, int64_t width, torch::TensorOptions options) {
  std::vector<torch::Tensor> planes;
  planes.reserve(targets.size());
  for (int t : targets) planes.push_back(build_condition(t, group_count, height, width, options));
  return torch::stack(planes);
}

}  // namespace pfa
