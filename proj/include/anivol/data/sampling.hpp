#pragma once

#include <cstddef>
#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace anivol {

/// `epoch_len` indices into `labels`, drawn with replacement so that each
/// sample has probability ∝ 1/(count of its class): a fair class coin, then
/// a uniform member of that class. Rejects single-class input.
std::vector<std::size_t> oversample_indices(std::span<const int> labels, std::size_t epoch_len, std::uint64_t seed);

/// k disjoint folds of sample indices covering the dataset.
struct FoldAssignment {
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;  // each sorted ascending

  std::size_t k() const noexcept { return folds.size(); }
  std::size_t sample_count() const;
  /// Samples of every fold except `fold`, ascending.
  std::vector<std::size_t> training(std::size_t fold) const;
  const std::vector<std::size_t>& hold_out(std::size_t fold) const { return folds.at(fold); }

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

/// Shuffles each class, then deals its members round robin across folds,
/// continuing the deal position from one class to the next, so each fold
/// holds ⌊n_c/k⌋ or ⌈n_c/k⌉ of class c. Requires 2 ≤ k ≤ the smaller class count.
FoldAssignment stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);

nlohmann::json to_json(const FoldAssignment& folds, std::span<const std::string> ids);

}  // namespace anivol
