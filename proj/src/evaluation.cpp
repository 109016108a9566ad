#include "pfa/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pfa/image_io.hpp"
#include "pfa/metrics.hpp"

namespace pfa {

namespace fs = std::filesystem;

torch::Tensor AgingModel::transform(const torch::Tensor& x, int source, int target) {
  if (source < 1 || target > group_count() || source > target) {
    std::ostringstream os;
    os << "cannot age from group " << source << " to " << target << "; valid targets are " << source << ".."
       << group_count();
    throw std::invalid_argument(os.str());
  }
  torch::NoGradGuard guard;
  if (source == target) return x.clone();
  return run(x, source, target).clamp(-1.0, 1.0);
}

torch::Tensor GeneratorModel::run(const torch::Tensor& x, int source, int target) {
  g_->train(false);
  ++calls_;
  if (g_->mode() == TrainMode::cgan_single) {
    return g_->conditional()->forward(x, std::vector<int>(static_cast<std::size_t>(x.size(0)), target));
  }
  return g_->progressive()->forward(x, build_gates(source, target, g_->group_count()));
}

SequentialConditionalModel::SequentialConditionalModel(std::shared_ptr<Generator> g) : g_(std::move(g)) {
  if (g_->mode() != TrainMode::cgan_single) throw ConfigError("sequential evaluation needs a cgan_single checkpoint");
}

torch::Tensor SequentialConditionalModel::run(const torch::Tensor& x, int source, int target) {
  g_->train(false);
  auto out = x;
  for (int step = source + 1; step <= target; ++step) {
    ++calls_;
    out = g_->conditional()->forward(out, std::vector<int>(static_cast<std::size_t>(x.size(0)), step)).clamp(-1.0, 1.0);
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> chunks(const std::vector<std::size_t>& indices, int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < indices.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto e = std::min(indices.size(), b + static_cast<std::size_t>(batch_size));
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(b), indices.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kDouble).contiguous();
  return std::vector<double>(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

struct Sequences {
  std::vector<std::vector<double>> per_face;  // N ages each
  std::vector<std::optional<double>> generic;  // per model group
};

std::vector<std::size_t> source_faces(const FaceDataset& data, int group_count, Direction direction, int max_faces) {
  auto sources = data.indices(Split::test, natural_group(1, group_count, direction));
  if (sources.empty()) throw DataError("test split has no faces in the source age group");
  if (max_faces > 0 && static_cast<int>(sources.size()) > max_faces) sources.resize(static_cast<std::size_t>(max_faces));
  return sources;
}

std::vector<std::vector<double>> real_ages(const FaceDataset& data, AgeEstimator& estimator, int group_count,
                                           Direction direction, int batch_size) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(group_count));
  for (int m = 1; m <= group_count; ++m) {
    for (const auto& chunk : chunks(data.indices(Split::test, natural_group(m, group_count, direction)), batch_size)) {
      auto ages = to_vector(estimator->forward(data.batch(chunk)).expected_age);
      auto& dst = out[static_cast<std::size_t>(m - 1)];
      dst.insert(dst.end(), ages.begin(), ages.end());
    }
  }
  return out;
}

}  // namespace

double probe_pcc(AgingModel& model, const FaceDataset& data, AgeEstimator& estimator, Direction direction,
                 int max_faces, int batch_size) {
  torch::NoGradGuard guard;
  estimator->eval();
  const int n = model.group_count();
  auto real = real_ages(data, estimator, n, direction, batch_size);
  std::vector<double> generic;
  for (const auto& r : real) {
    if (r.empty()) throw DataError("a test age group is empty; the generic age sequence is undefined");
    generic.push_back(mean_of(r));
  }
  std::vector<std::vector<double>> seqs;
  for (const auto& chunk : chunks(source_faces(data, n, direction, max_faces), batch_size)) {
    auto x = data.batch(chunk);
    std::vector<std::vector<double>> cols{to_vector(estimator->forward(x).expected_age)};
    for (int t = 2; t <= n; ++t) cols.push_back(to_vector(estimator->forward(model.transform(x, 1, t)).expected_age));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::vector<double> s;
      for (const auto& c : cols) s.push_back(c[i]);
      seqs.push_back(std::move(s));
    }
  }
  return pcc(seqs, generic).value;
}

EvalResult evaluate(AgingModel& model, const FaceDataset& data, AgeEstimator& oracle, IdentityEmbedder& embedder,
                    const EvalOptions& options) {
  torch::NoGradGuard guard;
  oracle->eval();
  const int n = model.group_count();
  if (n != data.partition().group_count()) throw ConfigError("model and dataset disagree on the number of age groups");
  const auto sources = source_faces(data, n, options.direction, options.max_faces);
  auto label = [&](int m) { return data.partition().label(natural_group(m, n, options.direction)); };

  auto real = real_ages(data, oracle, n, options.direction, options.batch_size);
  std::vector<std::vector<double>> fake(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> similarity(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> seqs;
  std::vector<torch::Tensor> probs;
  EvalResult result;
  for (int m = 1; m <= n; ++m) result.montage_labels.push_back(label(m));

  for (const auto& chunk : chunks(sources, options.batch_size)) {
    auto x = data.batch(chunk);
    std::vector<std::vector<double>> cols{to_vector(oracle->forward(x).expected_age)};
    std::vector<torch::Tensor> outputs{x};
    for (int t = 2; t <= n; ++t) {
      auto y = model.transform(x, 1, t);
      auto est = oracle->forward(y);
      cols.push_back(to_vector(est.expected_age));
      auto& f = fake[static_cast<std::size_t>(t - 1)];
      f.insert(f.end(), cols.back().begin(), cols.back().end());
      auto sim = to_vector(embedder.similarity(x, y));
      auto& s = similarity[static_cast<std::size_t>(t - 1)];
      s.insert(s.end(), sim.begin(), sim.end());
      probs.push_back(torch::softmax(est.group_logits.to(torch::kDouble), 1));
      outputs.push_back(y);
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::vector<double> seq;
      for (const auto& c : cols) seq.push_back(c[i]);
      seqs.push_back(std::move(seq));
      if (static_cast<int>(result.montage.size()) < options.montage_faces) {
        std::vector<torch::Tensor> row;
        for (const auto& o : outputs) row.push_back(o[static_cast<int64_t>(i)]);
        result.montage.push_back(std::move(row));
      }
    }
  }

  nlohmann::json report;
  report["model"] = model.name();
  report["checkpoint"] = options.checkpoint_id;
  report["config_hash"] = options.config_hash;
  report["direction"] = to_string(options.direction);
  report["oracle_independent"] = options.oracle_independent;
  report["source_group"] = label(1);
  report["faces"] = sources.size();
  report["groups"] = result.montage_labels;

  std::vector<double> generic;
  bool generic_complete = true;
  for (int m = 1; m <= n; ++m) {
    const auto& r = real[static_cast<std::size_t>(m - 1)];
    report["real_mean_age"][label(m)] = r.empty() ? nlohmann::json() : nlohmann::json(mean_of(r));
    if (r.empty()) {
      generic_complete = false;
    } else {
      generic.push_back(mean_of(r));
    }
  }
  for (int t = 2; t <= n; ++t) {
    const auto& f = fake[static_cast<std::size_t>(t - 1)];
    const auto& r = real[static_cast<std::size_t>(t - 1)];
    report["fake_mean_age"][label(t)] = mean_of(f);
    report["age_estimation_error"][label(t)] =
        r.empty() ? nlohmann::json() : nlohmann::json(age_estimation_error(r, f));
  }

  report["pcc"] = nullptr;
  report["pcc_degenerate"] = 0;
  if (generic_complete) {
    try {
      auto p = pcc(seqs, generic);
      report["pcc"] = p.value;
      report["pcc_degenerate"] = p.degenerate;
    } catch (const std::invalid_argument&) {
      // constant generic sequence
    }
  }

  auto all_probs = torch::cat(probs);
  const int splits = std::max(1, std::min(options.is_splits, static_cast<int>(all_probs.size(0) / 2)));
  auto is = inception_score(all_probs, splits);
  report["inception_score"] = {{"mean", is.mean}, {"std", is.std}, {"splits", splits}};

  // impostor pairs: real test faces of different identities
  std::optional<double> threshold;
  const auto test = data.indices(Split::test);
  if (test.size() >= 2) {
    std::vector<torch::Tensor> embeddings;
    for (const auto& chunk : chunks(test, options.batch_size)) embeddings.push_back(embedder.embed(data.batch(chunk)));
    auto e = torch::cat(embeddings).to(torch::kDouble);
    auto gram = e.matmul(e.t()).contiguous();
    std::vector<double> impostor;
    for (std::size_t i = 0; i < test.size(); ++i) {
      for (std::size_t j = i + 1; j < test.size(); ++j) {
        if (data.records()[test[i]].identity_id != data.records()[test[j]].identity_id) {
          impostor.push_back(gram[static_cast<int64_t>(i)][static_cast<int64_t>(j)].item<double>());
        }
      }
    }
    if (!impostor.empty()) threshold = calibrate_threshold(impostor, options.far);
    report["identity"]["impostor_pairs"] = impostor.size();
  }
  report["identity"]["far"] = options.far;
  report["identity"]["threshold"] = optional_number(threshold);
  double all_sim = 0.0;
  std::size_t all_count = 0;
  for (int t = 2; t <= n; ++t) {
    const auto& s = similarity[static_cast<std::size_t>(t - 1)];
    auto ip = identity_preservation(s, threshold.value_or(1.0));
    report["identity"]["confidence"][label(t)] = ip.confidence;
    report["identity"]["verification_rate"][label(t)] = threshold ? nlohmann::json(ip.rate) : nlohmann::json();
    for (double v : s) all_sim += v;
    all_count += s.size();
  }
  report["identity"]["mean_confidence"] = all_sim / static_cast<double>(all_count);
  result.report = std::move(report);
  return result;
}

std::string report_csv(const nlohmann::json& report) {
  std::ostringstream os;
  os << std::setprecision(17) << "metric,group,value\n";
  auto value = [](const nlohmann::json& v) { return v.is_null() ? std::string() : v.dump(); };
  auto per_group = [&](const std::string& metric, const nlohmann::json& m) {
    for (auto it = m.begin(); it != m.end(); ++it) os << metric << "," << it.key() << "," << value(*it) << "\n";
  };
  per_group("age_estimation_error", report.value("age_estimation_error", nlohmann::json::object()));
  per_group("real_mean_age", report.value("real_mean_age", nlohmann::json::object()));
  per_group("fake_mean_age", report.value("fake_mean_age", nlohmann::json::object()));
  os << "pcc,," << value(report.value("pcc", nlohmann::json())) << "\n";
  os << "inception_score_mean,," << value(report["inception_score"]["mean"]) << "\n";
  os << "inception_score_std,," << value(report["inception_score"]["std"]) << "\n";
  const auto& identity = report["identity"];
  os << "identity_threshold,," << value(identity["threshold"]) << "\n";
  per_group("identity_confidence", identity["confidence"]);
  per_group("verification_rate", identity["verification_rate"]);
  os << "identity_mean_confidence,," << value(identity["mean_confidence"]) << "\n";
  return os.str();
}

void write_report(const EvalResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << result.report.dump(2) << "\n";
  std::ofstream(dir / "report.csv") << report_csv(result.report);
  if (!result.montage.empty()) write_montage(dir / "montage.png", result.montage, result.montage_labels);
}

}  // namespace pfa
