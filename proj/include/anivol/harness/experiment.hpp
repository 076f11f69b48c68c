#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "anivol/data/sampling.hpp"
#include "anivol/data/volume.hpp"
#include "anivol/harness/config.hpp"
#include "anivol/harness/metrics.hpp"

namespace anivol {

struct FoldResult {
  std::size_t fold = 0;
  bool failed = false;
  std::string message;  // diagnostics of a failed fold
  double auc = 0.0;
  double accuracy = 0.0;
  double recall_t2 = 0.0;
  double recall_t3 = 0.0;
  std::size_t n_t2 = 0;
  std::size_t n_t3 = 0;
};

struct ExperimentSummary {
  MeanStd auc, accuracy, recall_t2, recall_t3;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::size_t parameter_count = 0;
  FoldAssignment folds;
  std::vector<FoldResult> fold_results;
  ExperimentSummary summary;
};

ExperimentSummary summarize(const std::vector<FoldResult>& folds);

/// The config's volumes: loaded from `dataset` or generated from `phantoms`.
std::vector<Volume> load_volumes(const ExperimentConfig& config);

struct RunOptions {
  /// Called once per fold with the fold's training ids (every id that fed a
  /// gradient) and hold-out ids.
  std::function<void(std::size_t fold, const std::vector<std::string>& trained,
                     const std::vector<std::string>& held_out)>
      on_fold_ids;
  /// Write files under config.output_dir.
  bool write_outputs = true;
};

/// k-fold cross-validation: per fold, train on the other folds with
/// oversampling and augmentation, score the hold-out with TTA. Writes
/// config.resolved.json, folds.json, predictions_fold<i>.csv,
/// train_log.csv, metrics.csv, metrics.txt and checkpoints/fold<i>.ckpt.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
/// Same, on volumes already in memory.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::vector<Volume>& volumes,
                                const RunOptions& options = {});

/// A list of cells sharing data and folds.
struct AblationGrid {
  std::string name = "ablation";
  std::vector<ExperimentConfig> cells;
  /// order | name | params | auc | accuracy | recall_t2 | recall_t3; metrics
  /// sort descending, ties keep declaration order.
  std::string sort_by = "order";
  std::filesystem::path output_dir = "runs/ablation";
};

/// {"name", "sort_by", "output_dir", "base": {config}, "cells": [{overrides}]}.
/// Each cell is `base` with the cell's keys replaced (objects merged one level).
AblationGrid grid_from_json(const nlohmann::json& j);
AblationGrid load_grid(const std::filesystem::path& path);

struct AblationRow {
  std::string cell;
  std::string arch;
  std::string mode;
  std::string aggregator;
  std::string loss;
  std::size_t params = 0;
  ExperimentSummary summary;
};

/// Throws std::invalid_argument unless every cell has the same data source,
/// fold count and fold seed.
void check_paired(const AblationGrid& grid);

/// Runs every cell (outputs under <grid dir>/<cell name>), then writes
/// ablation.csv and ablation.txt. Rows come back sorted.
std::vector<AblationRow> run_ablation(const AblationGrid& grid);

std::vector<AblationRow> sort_rows(std::vector<AblationRow> rows, const std::string& key);

/// Aligned plain-text table with mean ± std columns and a footer naming the std convention.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace anivol
