#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace anivol {

/// Probability that a random T3 score exceeds a random T2 score, ties
/// counting ½ (Mann-Whitney, via midranks). Both classes must be present.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

struct Recalls {
  double recall_t2 = 0.0;
  double recall_t3 = 0.0;
  double accuracy = 0.0;
  std::size_t n_t2 = 0;
  std::size_t n_t3 = 0;
};

/// Predicted T3 iff score >= threshold.
Recalls compute_recalls(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

}  // namespace anivol
