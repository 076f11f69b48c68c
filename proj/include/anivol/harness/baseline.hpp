#pragma once

#include <cstddef>
#include <vector>

#include "anivol/data/sampling.hpp"
#include "anivol/data/volume.hpp"
#include "anivol/harness/metrics.hpp"

namespace anivol {

/// L2-regularized logistic regression fitted by Newton's method on
/// standardized features; the intercept is not penalized.
class LogisticRegression {
 public:
  void fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels, double l2 = 1e-2);
  double probability(const std::vector<double>& features) const;

 private:
  std::vector<double> mean_, scale_, weights_;
  double intercept_ = 0.0;
};

struct BaselineResult {
  std::vector<double> fold_auc;
  MeanStd auc;
};

/// Cross-validated hold-out AUC of LogisticRegression on
/// phantom_radial_features of each prepared volume.
BaselineResult logistic_baseline(const std::vector<Volume>& volumes, const FoldAssignment& folds, std::size_t side);

}  // namespace anivol
