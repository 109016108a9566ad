#include "pfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pfa {

namespace {

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

double age_estimation_error(const std::vector<double>& real_ages, const std::vector<double>& fake_ages) {
  if (real_ages.empty() || fake_ages.empty()) throw std::invalid_argument("age estimation error needs non-empty sets");
  return std::abs(mean(real_ages) - mean(fake_ages));
}

std::vector<std::optional<double>> age_estimation_error(const std::vector<std::vector<double>>& real_ages,
                                                        const std::vector<std::vector<double>>& fake_ages) {
  if (real_ages.size() != fake_ages.size()) throw std::invalid_argument("per-group age lists differ in length");
  std::vector<std::optional<double>> out;
  for (std::size_t g = 0; g < real_ages.size(); ++g) {
    if (real_ages[g].empty() || fake_ages[g].empty()) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(age_estimation_error(real_ages[g], fake_ages[g]));
    }
  }
  return out;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson needs two sequences of equal length >= 2");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

PccResult pcc(const std::vector<std::vector<double>>& sequences, const std::vector<double>& generic) {
  if (sequences.empty()) throw std::invalid_argument("pcc needs at least one sequence");
  const auto variance_check = pearson(generic, generic);
  if (!variance_check) throw std::invalid_argument("generic age sequence has zero variance");
  PccResult result;
  double sum = 0.0;
  for (const auto& s : sequences) {
    if (s.size() != generic.size()) throw std::invalid_argument("age sequence length differs from the generic sequence");
    if (auto rho = pearson(s, generic)) {
      sum += *rho;
    } else {
      ++result.degenerate;
    }
  }
  if (result.degenerate > 0) {
    std::cerr << "warning: " << result.degenerate << " constant age sequence(s) scored as correlation 0\n";
  }
  result.value = sum / static_cast<double>(sequences.size());
  return result;
}

InceptionScore inception_score(const torch::Tensor& probs, int splits) {
  if (probs.dim() != 2 || splits < 1) throw std::invalid_argument("inception score needs (n, K) probabilities and splits >= 1");
  const auto n = probs.size(0), k = probs.size(1);
  if (n < 2 * splits) throw std::invalid_argument("inception score needs at least 2 * splits images");
  auto p = probs.detach().to(torch::kDouble).contiguous();
  if (p.min().item<double>() < 0.0 || (p.sum(1) - 1.0).abs().max().item<double>() > 1e-5) {
    throw std::invalid_argument("classifier output rows must be probability distributions");
  }
  const double* data = p.data_ptr<double>();
  const int64_t part = n / splits;
  std::vector<long double> scores;
  for (int s = 0; s < splits; ++s) {
    const int64_t begin = s * part, end = begin + part;
    std::vector<long double> marginal(static_cast<std::size_t>(k), 0.0L);
    for (int64_t i = begin; i < end; ++i) {
      for (int64_t j = 0; j < k; ++j) marginal[static_cast<std::size_t>(j)] += data[i * k + j];
    }
    for (auto& m : marginal) m /= static_cast<long double>(part);
    long double kl_mean = 0.0L;
    for (int64_t i = begin; i < end; ++i) {
      long double kl = 0.0L;
      for (int64_t j = 0; j < k; ++j) {
        const long double pij = data[i * k + j];
        if (pij > 0.0L) kl += pij * (std::log(pij) - std::log(marginal[static_cast<std::size_t>(j)]));
      }
      kl_mean += (kl - kl_mean) / static_cast<long double>(i - begin + 1);
    }
    scores.push_back(std::exp(kl_mean));
  }
  long double m = 0.0L;
  for (auto v : scores) m += v;
  m /= static_cast<long double>(scores.size());
  long double var = 0.0L;
  for (auto v : scores) var += (v - m) * (v - m);
  var /= static_cast<long double>(scores.size());
  return {static_cast<double>(m), static_cast<double>(std::sqrt(var))};
}

IdentityPreservation identity_preservation(const std::vector<double>& similarities, double threshold) {
  if (similarities.empty()) throw std::invalid_argument("identity preservation needs at least one pair");
  IdentityPreservation out;
  out.confidence = mean(similarities);
  const auto accepted = std::count_if(similarities.begin(), similarities.end(), [&](double s) { return s >= threshold; });
  out.rate = static_cast<double>(accepted) / static_cast<double>(similarities.size());
  return out;
}

double calibrate_threshold(std::vector<double> impostor_similarities, double far) {
  if (impostor_similarities.empty()) throw std::invalid_argument("threshold calibration needs impostor pairs");
  if (!(far >= 0.0 && far < 1.0)) throw std::invalid_argument("false acceptance rate must be in [0, 1)");
  std::sort(impostor_similarities.begin(), impostor_similarities.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(std::floor(far * static_cast<double>(impostor_similarities.size())));
  return std::nextafter(impostor_similarities[allowed], std::numeric_limits<double>::infinity());
}

}  // namespace pfa
