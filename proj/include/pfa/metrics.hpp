#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

namespace pfa {

// |mean(real) - mean(fake)|; both sets must be non-empty.
double age_estimation_error(const std::vector<double>& real_ages, const std::vector<double>& fake_ages);

// Per group; a group with either set empty is reported as missing.
std::vector<std::optional<double>> age_estimation_error(const std::vector<std::vector<double>>& real_ages,
                                                        const std::vector<std::vector<double>>& fake_ages);

// Pearson correlation; nullopt when either sequence has zero variance.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

struct PccResult {
  double value = 0.0;
  int degenerate = 0;  // constant sequences scored as 0
};

// Mean correlation of every sequence with the generic one. The generic
// sequence must vary; constant individual sequences count as 0.
PccResult pcc(const std::vector<std::vector<double>>& sequences, const std::vector<double>& generic);

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;
};

// probs: (n, K) rows of class probabilities, n >= 2 * splits.
InceptionScore inception_score(const torch::Tensor& probs, int splits = 10);

struct IdentityPreservation {
  double confidence = 0.0;  // mean similarity
  double rate = 0.0;        // fraction with similarity >= threshold
};

IdentityPreservation identity_preservation(const std::vector<double>& similarities, double threshold);

// Smallest threshold whose impostor acceptance does not exceed `far`.
double calibrate_threshold(std::vector<double> impostor_similarities, double far = 1e-3);

}  // namespace pfa
