#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>

#include "anivol/aggregation/aggregate.hpp"
#include "anivol/data/augment.hpp"
#include "anivol/data/phantom.hpp"
#include "anivol/objectives/losses.hpp"

namespace anivol {

enum class ModelMode {
  slice,   // shared slice head; scored on representative slices
  volume,  // depth aggregation then a volume head
};

ModelMode parse_mode(std::string_view token);
std::string_view to_string(ModelMode mode);

struct ExperimentConfig {
  std::string name = "experiment";
  std::string arch = "f-rMC5";
  ModelMode mode = ModelMode::volume;
  std::optional<AggregatorKind> aggregator = AggregatorKind::bilinear;
  LossConfig loss;
  double lr = 0.01;
  double weight_decay = 0.01;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;  // volumes per step
  std::uint64_t seed = 0;
  std::uint64_t fold_seed = 0;
  std::size_t folds = 10;
  /// Exactly one data source: a dataset directory or phantom settings.
  std::optional<std::filesystem::path> dataset;
  std::optional<PhantomConfig> phantoms;
  std::size_t side = 64;
  std::size_t tta = 10;
  AugmentationPolicy augmentation = AugmentationPolicy::standard();
  std::filesystem::path output_dir = "runs/experiment";
  bool save_checkpoints = true;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

/// Unknown keys are rejected. `fold_seed` defaults to `seed`, `aggregator`
/// to bilinear in volume mode, `output_dir` to runs/<name>.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Every key with its resolved value.
nlohmann::json to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical description of the dataset source, for comparing cells.
nlohmann::json data_source_json(const ExperimentConfig& config);

}  // namespace anivol
