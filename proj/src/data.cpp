#include "pfa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "pfa/image_io.hpp"

namespace pfa {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

}  // namespace

std::vector<FaceRecord> ingest(const fs::path& manifest, const fs::path& root, const AgeGroupPartition& partition,
                               const IngestOptions& options) {
  std::ifstream in(manifest);
  if (!in) throw DataError("manifest not found: " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest is empty: " + manifest.string());
  auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int id_col = column("id"), image_col = column("image"), age_col = column("age"), split_col = column("split");
  if (id_col < 0 || image_col < 0 || age_col < 0) {
    throw DataError("manifest header must contain id,image,age (got '" + line + "')");
  }

  std::vector<FaceRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    const auto needed = static_cast<std::size_t>(std::max({id_col, image_col, age_col, split_col}) + 1);
    if (cells.size() < needed) throw DataError("manifest line " + std::to_string(line_no) + ": too few columns");
    FaceRecord r;
    r.identity_id = cells[static_cast<std::size_t>(id_col)];
    r.image_path = cells[static_cast<std::size_t>(image_col)];
    const auto& age_text = cells[static_cast<std::size_t>(age_col)];
    try {
      std::size_t used = 0;
      const double age = std::stod(age_text, &used);
      if (used != age_text.size() || !(age >= 0)) throw std::invalid_argument(age_text);
      r.age = static_cast<int>(std::floor(age + 0.5));
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(line_no) + ": unparseable age '" + age_text + "'");
    }
    r.group = partition.group_of(r.age);
    if (split_col >= 0) {
      const auto& s = cells[static_cast<std::size_t>(split_col)];
      if (s == "train") {
        r.split = Split::train;
      } else if (s == "test") {
        r.split = Split::test;
      } else {
        throw DataError("manifest line " + std::to_string(line_no) + ": split must be train|test, got '" + s + "'");
      }
    }
    if (!fs::exists(root / r.image_path)) {
      throw DataError("manifest line " + std::to_string(line_no) + ": missing image " + (root / r.image_path).string());
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError("manifest has no records: " + manifest.string());

  if (split_col < 0) {
    std::set<std::string> unique;
    for (const auto& r : records) unique.insert(r.identity_id);
    std::vector<std::string> ids(unique.begin(), unique.end());
    std::mt19937_64 rng(options.seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::ceil(options.train_fraction * static_cast<double>(ids.size())));
    std::set<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, ids.size())));
    for (auto& r : records) r.split = train.count(r.identity_id) ? Split::train : Split::test;
  } else {
    std::map<std::string, Split> seen;
    for (const auto& r : records) {
      auto [it, inserted] = seen.emplace(r.identity_id, r.split);
      if (!inserted && it->second != r.split) {
        throw DataError("identity '" + r.identity_id + "' appears in both train and test splits");
      }
    }
  }
  return records;
}

torch::Tensor load_normalized(const FaceRecord& record, const fs::path& root, int size) {
  return normalize_u8(to_chw_u8(square_resize(read_rgb(root / record.image_path), size)));
}

FaceDataset::FaceDataset(std::vector<FaceRecord> records, fs::path root, int size, AgeGroupPartition partition)
    : root_(std::move(root)), size_(size), partition_(std::move(partition)) {
  for (auto& r : records) {
    try {
      pixels_.push_back(to_chw_u8(square_resize(read_rgb(root_ / r.image_path), size_)));
      records_.push_back(std::move(r));
    } catch (const DataError& e) {
      ++skipped_;
      std::cerr << "warning: skipping " << r.image_path << ": " << e.what() << "\n";
    }
  }
  if (records_.empty()) throw DataError("no decodable images under " + root_.string());
}

FaceDataset FaceDataset::open(const fs::path& root, int size, const AgeGroupPartition& partition,
                              const IngestOptions& options) {
  return FaceDataset(ingest(root / "manifest.csv", root, partition, options), root, size, partition);
}

std::vector<std::size_t> FaceDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FaceDataset::indices(Split split, int natural_group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == split && records_[i].group == natural_group) out.push_back(i);
  }
  return out;
}

torch::Tensor FaceDataset::image(std::size_t index) const { return normalize_u8(pixels_.at(index)); }

torch::Tensor FaceDataset::batch(const std::vector<std::size_t>& indices) const {
  std::vector<torch::Tensor> items;
  items.reserve(indices.size());
  for (auto i : indices) items.push_back(image(i));
  return torch::stack(items);
}

double FaceDataset::mean_age(Split split, int natural_group) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records_) {
    if (r.split == split && r.group == natural_group) {
      sum += r.age;
      ++n;
    }
  }
  if (n == 0) throw ConfigError("age group " + std::to_string(natural_group) + " has no " + to_string(split) + " records");
  return sum / static_cast<double>(n);
}

TargetAge parse_target_age(const std::string& name) {
  if (name == "group_mean") return TargetAge::group_mean;
  if (name == "group_midpoint") return TargetAge::group_midpoint;
  throw ConfigError("unknown train.target_age '" + name + "' (expected group_mean|group_midpoint)");
}

std::string to_string(TargetAge t) { return t == TargetAge::group_mean ? "group_mean" : "group_midpoint"; }

std::vector<GateVector> PairBatch::gates(int group_count) const {
  std::vector<GateVector> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) out.push_back(build_gates(source[i], target[i], group_count));
  return out;
}

PairSampler::PairSampler(const FaceDataset& data, Direction direction, TargetAge target_age, bool adjacent_only)
    : data_(&data), direction_(direction), adjacent_only_(adjacent_only), group_count_(data.partition().group_count()) {
  by_model_group_.resize(static_cast<std::size_t>(group_count_));
  for (auto i : data.indices(Split::train)) {
    const int m = model_group(data.records()[i].group, group_count_, direction_);
    by_model_group_[static_cast<std::size_t>(m - 1)].push_back(i);
  }
  for (int m = 1; m <= group_count_; ++m) {
    const auto& members = by_model_group_[static_cast<std::size_t>(m - 1)];
    const int natural = natural_group(m, group_count_, direction_);
    if (members.empty()) {
      throw ConfigError("age group " + data.partition().label(natural) + " has no training faces");
    }
    if (target_age == TargetAge::group_mean) {
      target_ages_.push_back(data.mean_age(Split::train, natural));
    } else {
      int lo = 1000, hi = -1;
      for (auto i : members) {
        lo = std::min(lo, data.records()[i].age);
        hi = std::max(hi, data.records()[i].age);
      }
      // open-ended intervals are closed by the observed training extremes
      const int lower = natural == 1 ? lo : data.partition().lower_age(natural);
      const int upper = data.partition().upper_age(natural) < 0 ? hi : data.partition().upper_age(natural);
      target_ages_.push_back(0.5 * (lower + upper));
    }
  }
}

double PairSampler::target_age(int model_group) const { return target_ages_.at(static_cast<std::size_t>(model_group - 1)); }

PairSample PairSampler::sample(std::mt19937_64& rng) const {
  PairSample p;
  p.source = std::uniform_int_distribution<int>(1, group_count_ - 1)(rng);
  p.target = adjacent_only_ ? p.source + 1 : std::uniform_int_distribution<int>(p.source + 1, group_count_)(rng);
  const auto& members = by_model_group_[static_cast<std::size_t>(p.source - 1)];
  p.record = members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
  p.target_age = target_age(p.target);
  return p;
}

std::pair<std::size_t, int> PairSampler::sample_real(std::mt19937_64& rng) const {
  const int g = std::uniform_int_distribution<int>(1, group_count_)(rng);
  const auto& members = by_model_group_[static_cast<std::size_t>(g - 1)];
  return {members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)], g};
}

namespace {

torch::Tensor maybe_flip(torch::Tensor image, bool flip, std::mt19937_64& rng) {
  if (!flip) return image;
  return std::bernoulli_distribution(0.5)(rng) ? image.flip({2}) : image;
}

}  // namespace

PairBatch PairSampler::pair_batch(std::mt19937_64& rng, int batch_size, bool flip) const {
  PairBatch b;
  std::vector<torch::Tensor> images;
  std::vector<double> ages;
  for (int i = 0; i < batch_size; ++i) {
    auto p = sample(rng);
    images.push_back(maybe_flip(data_->image(p.record), flip, rng));
    b.source.push_back(p.source);
    b.target.push_back(p.target);
    b.target_natural.push_back(natural_group(p.target, group_count_, direction_));
    ages.push_back(p.target_age);
  }
  b.images = torch::stack(images);
  b.target_age = torch::tensor(ages, torch::kFloat);
  return b;
}

RealBatch PairSampler::real_batch(std::mt19937_64& rng, int batch_size, bool flip) const {
  RealBatch b;
  std::vector<torch::Tensor> images;
  for (int i = 0; i < batch_size; ++i) {
    auto [index, group] = sample_real(rng);
    images.push_back(maybe_flip(data_->image(index), flip, rng));
    b.groups.push_back(group);
  }
  b.images = torch::stack(images);
  return b;
}

}  // namespace pfa
