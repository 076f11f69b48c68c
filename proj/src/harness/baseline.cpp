#include "anivol/harness/baseline.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "anivol/data/phantom.hpp"
#include "anivol/data/preprocess.hpp"

namespace anivol {

void LogisticRegression::fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                             double l2) {
  if (features.empty() || features.size() != labels.size()) throw std::invalid_argument("logistic: bad training set");
  const std::size_t n = features.size(), f = features.front().size();
  mean_.assign(f, 0.0);
  scale_.assign(f, 0.0);
  for (const auto& x : features) {
    if (x.size() != f) throw std::invalid_argument("logistic: ragged features");
    for (std::size_t j = 0; j < f; ++j) mean_[j] += x[j] / static_cast<double>(n);
  }
  for (const auto& x : features)
    for (std::size_t j = 0; j < f; ++j) scale_[j] += (x[j] - mean_[j]) * (x[j] - mean_[j]) / static_cast<double>(n);
  for (double& s : scale_) s = std::sqrt(s) > 1e-12 ? std::sqrt(s) : 1.0;

  Eigen::MatrixXd X(n, f + 1);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < f; ++j) X(i, j + 1) = (features[i][j] - mean_[j]) / scale_[j];
    y(i) = labels[i];
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(f + 1);
  Eigen::MatrixXd penalty = l2 * static_cast<double>(n) * Eigen::MatrixXd::Identity(f + 1, f + 1);
  penalty(0, 0) = 0.0;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd p = (1.0 + (-(X * w)).array().exp()).inverse().matrix();
    const Eigen::VectorXd grad = X.transpose() * (p - y) + penalty * w;
    const Eigen::VectorXd s = (p.array() * (1.0 - p.array())).matrix();
    const Eigen::MatrixXd H = X.transpose() * s.asDiagonal() * X + penalty +
                              1e-9 * Eigen::MatrixXd::Identity(f + 1, f + 1);
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    w -= step;
    if (step.norm() < 1e-10) break;
  }
  intercept_ = w(0);
  weights_.assign(w.data() + 1, w.data() + f + 1);
}

double LogisticRegression::probability(const std::vector<double>& features) const {
  if (features.size() != weights_.size()) throw std::invalid_argument("logistic: feature count mismatch");
  double z = intercept_;
  for (std::size_t j = 0; j < features.size(); ++j) z += weights_[j] * (features[j] - mean_[j]) / scale_[j];
  return 1.0 / (1.0 + std::exp(-z));
}

BaselineResult logistic_baseline(const std::vector<Volume>& volumes, const FoldAssignment& folds, std::size_t side) {
  std::vector<std::vector<double>> features;
  features.reserve(volumes.size());
  for (const auto& v : volumes) features.push_back(phantom_radial_features(prepare(v, side)));
  BaselineResult out;
  for (std::size_t f = 0; f < folds.k(); ++f) {
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (std::size_t i : folds.training(f)) {
      xs.push_back(features[i]);
      ys.push_back(volumes[i].label);
    }
    LogisticRegression model;
    model.fit(xs, ys);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i : folds.hold_out(f)) {
      scores.push_back(model.probability(features[i]));
      labels.push_back(volumes[i].label);
    }
    out.fold_auc.push_back(compute_auc(scores, labels));
  }
  out.auc = mean_std(out.fold_auc);
  return out;
}

}  // namespace anivol
