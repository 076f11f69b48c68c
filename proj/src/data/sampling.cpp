#include "anivol/data/sampling.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>
#include <string>

#include "anivol/data/seeding.hpp"

namespace anivol {

namespace {

std::array<std::vector<std::size_t>, 2> members_by_class(std::span<const int> labels) {
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                  " is not 0 or 1");
    }
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return members;
}

std::size_t uniform_below(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng));
}

}  // namespace

std::vector<std::size_t> oversample_indices(std::span<const int> labels, std::size_t epoch_len, std::uint64_t seed) {
  const auto members = members_by_class(labels);
  if (members[0].empty() || members[1].empty()) {
    throw std::invalid_argument("oversample_indices: both classes must be present");
  }
  std::mt19937_64 rng(derive_seed(seed, {0x05a3}));
  std::vector<std::size_t> out;
  out.reserve(epoch_len);
  for (std::size_t i = 0; i < epoch_len; ++i) {
    const auto& cls = members[rng() >> 63];
    out.push_back(cls[uniform_below(rng, cls.size())]);
  }
  return out;
}

std::size_t FoldAssignment::sample_count() const {
  std::size_t n = 0;
  for (const auto& f : folds) n += f.size();
  return n;
}

std::vector<std::size_t> FoldAssignment::training(std::size_t fold) const {
  if (fold >= folds.size()) throw std::out_of_range("fold index " + std::to_string(fold));
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldAssignment stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  auto members = members_by_class(labels);
  const std::size_t smallest = std::min(members[0].size(), members[1].size());
  if (k < 2 || k > smallest) {
    throw std::invalid_argument("stratified_kfold: k=" + std::to_string(k) + " needs 2 <= k <= smaller class count " +
                                std::to_string(smallest));
  }
  FoldAssignment out;
  out.seed = seed;
  out.folds.resize(k);
  std::mt19937_64 rng(derive_seed(seed, {0xf01d}));
  std::size_t next = 0;
  for (auto& cls : members) {
    std::shuffle(cls.begin(), cls.end(), rng);
    for (std::size_t idx : cls) {
      out.folds[next].push_back(idx);
      next = (next + 1) % k;
    }
  }
  for (auto& f : out.folds) std::sort(f.begin(), f.end());
  return out;
}

nlohmann::json to_json(const FoldAssignment& folds, std::span<const std::string> ids) {
  nlohmann::json j;
  j["seed"] = folds.seed;
  j["k"] = folds.k();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& f : folds.folds) {
    nlohmann::json names = nlohmann::json::array();
    for (std::size_t i : f) names.push_back(i < ids.size() ? ids[i] : std::to_string(i));
    list.push_back(names);
  }
  j["folds"] = list;
  return j;
}

}  // namespace anivol
