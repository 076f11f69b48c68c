#include "anivol/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace anivol {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* who) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(labels.size()) + " labels");
  }
  bool has[2] = {false, false};
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    has[y] = true;
  }
  if (!has[0] || !has[1]) throw std::invalid_argument(std::string(who) + ": both classes must be present");
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument(std::string(who) + ": NaN score");
  }
}

}  // namespace

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "compute_auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // doubled midranks keep the rank sum an exact integer
  std::uint64_t positive_rank2 = 0, positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t rank2 = static_cast<std::uint64_t>(i + 1 + j);  // 2 × mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank2 += rank2;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  // 2·U = Σ 2·rank − P(P+1)
  const std::uint64_t u2 = positive_rank2 - positives * (positives + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

Recalls compute_recalls(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels, "compute_recalls");
  std::size_t tp = 0, tn = 0;
  Recalls r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted_t3 = scores[i] >= threshold;
    if (labels[i] == 1) {
      ++r.n_t3;
      tp += predicted_t3;
    } else {
      ++r.n_t2;
      tn += !predicted_t3;
    }
  }
  r.recall_t3 = static_cast<double>(tp) / static_cast<double>(r.n_t3);
  r.recall_t2 = static_cast<double>(tn) / static_cast<double>(r.n_t2);
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return {std::nan(""), std::nan("")};
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

}  // namespace anivol
