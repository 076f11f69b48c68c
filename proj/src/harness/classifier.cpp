#include "anivol/harness/classifier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

#include "anivol/data/preprocess.hpp"
#include "anivol/data/seeding.hpp"
#include "anivol/tensor/ops.hpp"

namespace anivol {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

SliceModel checked_model(const std::string& arch, ModelMode mode, std::optional<AggregatorKind> aggregator,
                         std::uint64_t seed) {
  if (mode == ModelMode::slice && aggregator) throw std::invalid_argument("slice mode takes no aggregator");
  if (mode == ModelMode::volume && !aggregator) throw std::invalid_argument("volume mode needs an aggregator");
  return build_variant(arch, seed);
}

}  // namespace

Classifier::Classifier(const std::string& arch, ModelMode mode, std::optional<AggregatorKind> aggregator,
                       std::uint64_t seed)
    : mode_(mode), aggregator_(aggregator), model_(checked_model(arch, mode, aggregator, seed)) {
  if (mode_ == ModelMode::volume) {
    Initializer init(derive_seed(seed, {0x40ad}));
    volume_head_.emplace(*aggregator_, StagePlan::kFeatureChannels, init);
  }
}

std::size_t Classifier::embedding_dim() const {
  return mode_ == ModelMode::volume ? aggregated_dim(*aggregator_, StagePlan::kFeatureChannels)
                                    : StagePlan::kFeatureChannels;
}

StateList Classifier::state() const {
  if (mode_ == ModelMode::slice) return model_.state();
  StateList s = model_.encoder.state();
  volume_head_->collect(s);
  return s;
}

Classifier::Rows Classifier::forward(std::span<const Volume* const> volumes, NormMode mode) {
  if (volumes.empty()) throw std::invalid_argument("Classifier::forward: empty batch");
  // groups in ascending depth, members in input order
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < volumes.size(); ++i) groups[volumes[i]->depth].push_back(i);

  std::vector<Var> logit_parts, embedding_parts;
  std::vector<std::size_t> row_owner;
  for (const auto& [depth, members] : groups) {
    std::vector<const Volume*> group;
    for (std::size_t i : members) group.push_back(volumes[i]);
    const FeatureMatrix f = model_.encoder.encode(Var(stack_volumes(group)), mode);
    const std::size_t n = members.size(), c = f.channels();
    if (mode_ == ModelMode::volume) {
      const Var pooled = aggregate(f, *aggregator_);
      logit_parts.push_back(volume_head_->forward(pooled));
      embedding_parts.push_back(pooled);
      row_owner.insert(row_owner.end(), members.begin(), members.end());
    } else {
      const Var slice_logits = reshape(model_.head.forward(f), {n * depth, 1});
      const std::array<std::size_t, 3> axes{0, 2, 1};
      const Var slice_features = reshape(permute(f.values, axes), {n * depth, c});
      std::vector<std::size_t> rows;
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t s : volumes[members[k]]->representative_slices) {
          rows.push_back(k * depth + s);
          row_owner.push_back(members[k]);
        }
      }
      logit_parts.push_back(gather_rows(slice_logits, rows));
      embedding_parts.push_back(gather_rows(slice_features, rows));
    }
  }

  // restore input order: stable by owner keeps slice rows in representative order
  std::vector<std::size_t> order(row_owner.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row_owner[a] < row_owner[b]; });

  Rows out;
  const Var logits = gather_rows(concat_rows(logit_parts), order);
  out.logits = reshape(logits, {order.size()});
  out.embeddings = gather_rows(concat_rows(embedding_parts), order);
  for (std::size_t i : order) {
    out.owner.push_back(row_owner[i]);
    out.labels.push_back(volumes[row_owner[i]]->label);
  }
  return out;
}

std::vector<double> Classifier::probabilities(std::span<const Volume* const> volumes) {
  NoGradGuard no_grad;
  const Rows rows = forward(volumes, NormMode::eval);
  std::vector<double> total(volumes.size(), 0.0), count(volumes.size(), 0.0);
  for (std::size_t r = 0; r < rows.owner.size(); ++r) {
    total[rows.owner[r]] += stable_sigmoid(rows.logits.value()[r]);
    count[rows.owner[r]] += 1.0;
  }
  for (std::size_t i = 0; i < total.size(); ++i) total[i] /= count[i];
  return total;
}

}  // namespace anivol
