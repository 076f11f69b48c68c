#include "anivol/harness/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <set>
#include <spdlog/spdlog.h>
#include <sstream>
#include <stdexcept>

#include "anivol/data/augment.hpp"
#include "anivol/data/preprocess.hpp"
#include "anivol/data/seeding.hpp"
#include "anivol/harness/classifier.hpp"
#include "anivol/tensor/checkpoint.hpp"
#include "anivol/tensor/sgd.hpp"

namespace anivol {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_atomically(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
    out << content;
    if (!out) throw std::runtime_error(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

std::string describe_cell(const ExperimentConfig& c) {
  std::string s = c.arch + " " + std::string(to_string(c.mode));
  if (c.aggregator) s += " " + std::string(to_string(*c.aggregator));
  return s + " " + std::string(to_string(c.loss.recipe));
}

std::string grouped(std::size_t n) {
  std::string digits = std::to_string(n), out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::string pm(const MeanStd& m) { return fmt::format("{:.3f} ± {:.3f}", m.mean, m.std); }

std::string metrics_csv(const std::vector<FoldResult>& folds, const ExperimentSummary& s) {
  std::string out = "fold,status,auc,accuracy,recall_t2,recall_t3,n_t2,n_t3\n";
  for (const auto& f : folds) {
    if (f.failed) {
      out += fmt::format("{},failed,,,,,{},{}\n", f.fold, f.n_t2, f.n_t3);
    } else {
      out += fmt::format("{},ok,{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", f.fold, f.auc, f.accuracy, f.recall_t2,
                         f.recall_t3, f.n_t2, f.n_t3);
    }
  }
  out += fmt::format("mean,{}/{} ok,{:.17g},{:.17g},{:.17g},{:.17g},,\n", s.completed, folds.size(), s.auc.mean,
                     s.accuracy.mean, s.recall_t2.mean, s.recall_t3.mean);
  out += fmt::format("std,population,{:.17g},{:.17g},{:.17g},{:.17g},,\n", s.auc.std, s.accuracy.std,
                     s.recall_t2.std, s.recall_t3.std);
  return out;
}

std::string metrics_txt(const ExperimentConfig& c, std::size_t params, const std::vector<FoldResult>& folds,
                        const ExperimentSummary& s) {
  std::string out = fmt::format("experiment {}: {} ({} params)\n\n", c.name, describe_cell(c), grouped(params));
  out += fmt::format("{:<6} {:<7} {:>17} {:>17} {:>17} {:>17}\n", "fold", "status", "AUC", "Acc", "Recall(T2)",
                     "Recall(T3)");
  for (const auto& f : folds) {
    if (f.failed) {
      out += fmt::format("{:<6} {:<7} {}\n", f.fold, "failed", f.message);
    } else {
      out += fmt::format("{:<6} {:<7} {:>17.3f} {:>17.3f} {:>17.3f} {:>17.3f}\n", f.fold, "ok", f.auc, f.accuracy,
                         f.recall_t2, f.recall_t3);
    }
  }
  out += fmt::format("{:<14} {:>17} {:>17} {:>17} {:>17}\n", "mean ± std", pm(s.auc), pm(s.accuracy),
                     pm(s.recall_t2), pm(s.recall_t3));
  out += fmt::format("\nstd is the population standard deviation over {} completed fold(s); {} failed. "
                     "Recalls and accuracy use threshold 0.5.\n",
                     s.completed, s.failed);
  return out;
}

std::string predictions_csv(const std::vector<Volume>& volumes, const std::vector<std::size_t>& hold,
                            const std::vector<double>& probs) {
  std::string out = "id,label,probability\n";
  for (std::size_t i = 0; i < hold.size(); ++i) {
    out += fmt::format("{},{},{:.17g}\n", volumes[hold[i]].id, volumes[hold[i]].label, probs[i]);
  }
  return out;
}

struct FoldOutcome {
  FoldResult result;
  std::vector<double> probabilities;
};

/// Mean TTA probability per hold-out volume, scored in chunks of `chunk` copies.
std::vector<double> score_hold_out(Classifier& clf, const std::vector<Volume>& prepared,
                                   const std::vector<std::size_t>& hold, const ExperimentConfig& c,
                                   const AugmentationPolicy& policy, std::size_t fold) {
  std::vector<Volume> copies;
  std::vector<std::size_t> owner;
  for (std::size_t h = 0; h < hold.size(); ++h) {
    auto tta = tta_copies(prepared[hold[h]], c.tta, policy, derive_seed(c.seed, {fold, 4, hold[h]}));
    for (auto& v : tta) {
      copies.push_back(std::move(v));
      owner.push_back(h);
    }
  }
  std::vector<double> total(hold.size(), 0.0), count(hold.size(), 0.0);
  const std::size_t chunk = std::max<std::size_t>(c.batch_size, 1);
  for (std::size_t start = 0; start < copies.size(); start += chunk) {
    std::vector<const Volume*> batch;
    for (std::size_t i = start; i < std::min(copies.size(), start + chunk); ++i) batch.push_back(&copies[i]);
    const auto p = clf.probabilities(batch);
    for (std::size_t i = 0; i < p.size(); ++i) {
      total[owner[start + i]] += p[i];
      count[owner[start + i]] += 1.0;
    }
  }
  for (std::size_t h = 0; h < hold.size(); ++h) total[h] /= count[h];
  return total;
}

FoldOutcome run_fold(const ExperimentConfig& c, const std::vector<Volume>& volumes,
                     const std::vector<Volume>& prepared, const FoldAssignment& folds, std::size_t fold,
                     const RunOptions& options, std::string& train_log) {
  FoldOutcome outcome;
  FoldResult& r = outcome.result;
  r.fold = fold;
  const auto train = folds.training(fold);
  const auto& hold = folds.hold_out(fold);
  for (std::size_t i : hold) (volumes[i].label ? r.n_t3 : r.n_t2)++;

  Classifier clf(c.arch, c.mode, c.aggregator, derive_seed(c.seed, {fold, 1}));
  StateList state = clf.state();
  std::optional<CenterState> centers;
  if (c.loss.recipe == LossRecipe::focal_center) centers.emplace(clf.embedding_dim(), c.loss.center_alpha);
  AugmentationPolicy policy = c.augmentation;
  policy.seed = derive_seed(c.augmentation.seed, {c.seed, fold, 3});
  const SgdConfig sgd{c.lr, c.weight_decay};

  std::vector<int> train_labels;
  for (std::size_t i : train) train_labels.push_back(volumes[i].label);
  const std::size_t steps = (train.size() + c.batch_size - 1) / c.batch_size;
  std::set<std::string> trained;

  for (std::size_t epoch = 0; epoch < c.epochs && !r.failed; ++epoch) {
    const auto order = oversample_indices(train_labels, steps * c.batch_size, derive_seed(c.seed, {fold, epoch, 2}));
    double loss_sum = 0.0, focal_sum = 0.0, center_sum = 0.0, triplet_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Volume> batch;
      for (std::size_t j = 0; j < c.batch_size; ++j) {
        const std::size_t idx = train[order[step * c.batch_size + j]];
        batch.push_back(augment(prepared[idx], policy, (epoch * steps + step) * c.batch_size + j));
        trained.insert(volumes[idx].id);
      }
      std::vector<const Volume*> ptrs;
      for (const auto& v : batch) ptrs.push_back(&v);
      const auto rows = clf.forward(ptrs, NormMode::train);
      const LossTerms terms = joint_loss(rows.logits, rows.embeddings, rows.labels, c.loss,
                                         centers ? &*centers : nullptr, true);
      const double loss = terms.total.value().item();
      if (!std::isfinite(loss)) {
        r.failed = true;
        r.message = fmt::format("loss became {} at epoch {} step {} (focal {}, center {}, triplet {})", loss, epoch,
                                step, terms.focal, terms.center, terms.triplet);
        spdlog::error("{} fold {}: {}", c.name, fold, r.message);
        break;
      }
      terms.total.backward();
      sgd_step(state.parameters(), sgd);
      loss_sum += loss;
      focal_sum += terms.focal;
      center_sum += terms.center;
      triplet_sum += terms.triplet;
    }
    if (r.failed) break;
    const double n = static_cast<double>(steps);
    train_log += fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g}\n", fold, epoch, loss_sum / n, focal_sum / n,
                             center_sum / n, triplet_sum / n);
    spdlog::info("{} fold {} epoch {}/{}: loss {:.4f}", c.name, fold, epoch + 1, c.epochs, loss_sum / n);
  }

  std::vector<std::string> held_out;
  for (std::size_t i : hold) {
    held_out.push_back(volumes[i].id);
    if (trained.contains(volumes[i].id)) {
      throw std::logic_error("hold-out volume " + volumes[i].id + " contributed gradients in fold " +
                             std::to_string(fold));
    }
  }
  if (options.on_fold_ids) options.on_fold_ids(fold, {trained.begin(), trained.end()}, held_out);
  if (r.failed) return outcome;

  outcome.probabilities = score_hold_out(clf, prepared, hold, c, policy, fold);
  std::vector<int> hold_labels;
  for (std::size_t i : hold) hold_labels.push_back(volumes[i].label);
  r.auc = compute_auc(outcome.probabilities, hold_labels);
  const Recalls rec = compute_recalls(outcome.probabilities, hold_labels);
  r.accuracy = rec.accuracy;
  r.recall_t2 = rec.recall_t2;
  r.recall_t3 = rec.recall_t3;
  spdlog::info("{} fold {}: AUC {:.4f} Acc {:.4f}", c.name, fold, r.auc, r.accuracy);

  if (options.write_outputs && c.save_checkpoints) {
    fs::create_directories(c.output_dir / "checkpoints");
    save_checkpoint(c.output_dir / "checkpoints" / fmt::format("fold{}.ckpt", fold), state, c.arch);
  }
  return outcome;
}

json merge_cell(json base, const json& cell) {
  for (const auto& [key, value] : cell.items()) {
    if (value.is_object() && base.contains(key) && base.at(key).is_object()) {
      for (const auto& [k, v] : value.items()) base[key][k] = v;
    } else {
      base[key] = value;
    }
  }
  return base;
}

}  // namespace

ExperimentSummary summarize(const std::vector<FoldResult>& folds) {
  ExperimentSummary s;
  std::vector<double> auc, acc, r2, r3;
  for (const auto& f : folds) {
    if (f.failed) {
      ++s.failed;
      continue;
    }
    ++s.completed;
    auc.push_back(f.auc);
    acc.push_back(f.accuracy);
    r2.push_back(f.recall_t2);
    r3.push_back(f.recall_t3);
  }
  s.auc = mean_std(auc);
  s.accuracy = mean_std(acc);
  s.recall_t2 = mean_std(r2);
  s.recall_t3 = mean_std(r3);
  return s;
}

std::vector<Volume> load_volumes(const ExperimentConfig& config) {
  if (config.dataset) return load_dataset(*config.dataset);
  return generate_phantom_dataset(*config.phantoms).volumes;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  return run_experiment(config, load_volumes(config), options);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::vector<Volume>& volumes,
                                const RunOptions& options) {
  config.validate();
  std::set<std::string> ids;
  for (const auto& v : volumes) {
    if (!ids.insert(v.id).second) throw std::invalid_argument("duplicate volume id " + v.id);
  }
  ExperimentResult result;
  result.config = config;
  const auto labels = labels_of(volumes);
  result.folds = stratified_kfold(labels, config.folds, config.fold_seed);
  result.parameter_count = Classifier(config.arch, config.mode, config.aggregator, 0).parameter_count();

  std::vector<Volume> prepared;
  prepared.reserve(volumes.size());
  for (const auto& v : volumes) prepared.push_back(prepare(v, config.side));

  const fs::path& dir = config.output_dir;
  if (options.write_outputs) {
    fs::create_directories(dir);
    write_atomically(dir / "config.resolved.json", to_json(config).dump(2) + "\n");
    std::vector<std::string> names;
    for (const auto& v : volumes) names.push_back(v.id);
    write_atomically(dir / "folds.json", to_json(result.folds, names).dump(2) + "\n");
  }

  std::string train_log = "fold,epoch,loss,focal,center,triplet\n";
  for (std::size_t f = 0; f < config.folds; ++f) {
    auto outcome = run_fold(config, volumes, prepared, result.folds, f, options, train_log);
    if (options.write_outputs && !outcome.result.failed) {
      write_atomically(dir / fmt::format("predictions_fold{}.csv", f),
                       predictions_csv(volumes, result.folds.hold_out(f), outcome.probabilities));
    }
    result.fold_results.push_back(std::move(outcome.result));
  }
  result.summary = summarize(result.fold_results);
  if (options.write_outputs) {
    write_atomically(dir / "train_log.csv", train_log);
    write_atomically(dir / "metrics.csv", metrics_csv(result.fold_results, result.summary));
    write_atomically(dir / "metrics.txt",
                     metrics_txt(config, result.parameter_count, result.fold_results, result.summary));
  }
  return result;
}

AblationGrid grid_from_json(const json& j) {
  if (!j.is_object() || !j.contains("cells") || !j.at("cells").is_array() || j.at("cells").empty()) {
    throw std::invalid_argument("grid: needs a non-empty 'cells' array");
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "sort_by" && key != "output_dir" && key != "base" && key != "cells") {
      throw std::invalid_argument("grid: unknown key '" + key + "'");
    }
  }
  AblationGrid grid;
  grid.name = j.value("name", grid.name);
  grid.sort_by = j.value("sort_by", grid.sort_by);
  grid.output_dir = j.value("output_dir", std::string("runs/") + grid.name);
  const json base = j.value("base", json::object());
  std::set<std::string> names;
  for (const auto& cell : j.at("cells")) {
    json merged = merge_cell(base, cell);
    ExperimentConfig c = config_from_json(merged);
    if (!cell.contains("name")) {
      c.name = c.arch + "_" + std::string(to_string(c.mode)) +
               (c.aggregator ? "_" + std::string(to_string(*c.aggregator)) : "") + "_" +
               std::string(to_string(c.loss.recipe));
    }
    if (!names.insert(c.name).second) throw std::invalid_argument("grid: duplicate cell name " + c.name);
    c.output_dir = grid.output_dir / c.name;
    grid.cells.push_back(std::move(c));
  }
  sort_rows({}, grid.sort_by);
  return grid;
}

AblationGrid load_grid(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open grid");
  try {
    return grid_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void check_paired(const AblationGrid& grid) {
  if (grid.cells.empty()) throw std::invalid_argument("ablation: empty grid");
  const auto& first = grid.cells.front();
  for (const auto& c : grid.cells) {
    if (c.fold_seed != first.fold_seed || c.folds != first.folds) {
      throw std::invalid_argument("ablation: cell " + c.name + " uses folds k=" + std::to_string(c.folds) +
                                  " seed " + std::to_string(c.fold_seed) + ", cell " + first.name + " uses k=" +
                                  std::to_string(first.folds) + " seed " + std::to_string(first.fold_seed));
    }
    if (data_source_json(c) != data_source_json(first)) {
      throw std::invalid_argument("ablation: cell " + c.name + " reads different data than " + first.name);
    }
  }
}

std::vector<AblationRow> sort_rows(std::vector<AblationRow> rows, const std::string& key) {
  using Get = double (*)(const AblationRow&);
  Get metric = nullptr;
  if (key == "auc") metric = [](const AblationRow& r) { return r.summary.auc.mean; };
  else if (key == "accuracy") metric = [](const AblationRow& r) { return r.summary.accuracy.mean; };
  else if (key == "recall_t2") metric = [](const AblationRow& r) { return r.summary.recall_t2.mean; };
  else if (key == "recall_t3") metric = [](const AblationRow& r) { return r.summary.recall_t3.mean; };
  else if (key == "params") metric = [](const AblationRow& r) { return static_cast<double>(r.params); };

  if (metric) {
    // NaN (all folds failed) sorts last
    std::stable_sort(rows.begin(), rows.end(), [&](const AblationRow& a, const AblationRow& b) {
      const double x = metric(a), y = metric(b);
      if (std::isnan(y)) return !std::isnan(x);
      return x > y;
    });
  } else if (key == "name") {
    std::stable_sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) { return a.cell < b.cell; });
  } else if (key != "order") {
    throw std::invalid_argument("unknown sort key '" + key +
                                "'; expected order, name, params, auc, accuracy, recall_t2 or recall_t3");
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.cell.size());
  std::string out = fmt::format("{:<{}}  {:<10} {:<6} {:<8} {:<13} {:>10}  {:<15} {:<15} {:<15} {:<15} {}\n", "cell",
                                w, "arch", "mode", "agg", "loss", "# params", "AUC", "Acc", "Recall(T2)",
                                "Recall(T3)", "failed");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:<10} {:<6} {:<8} {:<13} {:>10}  {:<15} {:<15} {:<15} {:<15} {}\n", r.cell, w, r.arch,
                       r.mode, r.aggregator, r.loss, grouped(r.params), pm(r.summary.auc), pm(r.summary.accuracy),
                       pm(r.summary.recall_t2), pm(r.summary.recall_t3), r.summary.failed);
  }
  out += "\nmean ± population standard deviation over completed folds; threshold 0.5 for Acc and recalls.\n";
  return out;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid) {
  check_paired(grid);
  sort_rows({}, grid.sort_by);
  const auto volumes = load_volumes(grid.cells.front());
  std::vector<AblationRow> rows;
  for (const auto& cell : grid.cells) {
    spdlog::info("ablation {}: cell {}", grid.name, cell.name);
    const auto result = run_experiment(cell, volumes);
    AblationRow row;
    row.cell = cell.name;
    row.arch = cell.arch;
    row.mode = to_string(cell.mode);
    row.aggregator = cell.aggregator ? std::string(to_string(*cell.aggregator)) : "-";
    row.loss = to_string(cell.loss.recipe);
    row.params = result.parameter_count;
    row.summary = result.summary;
    rows.push_back(std::move(row));
  }
  rows = sort_rows(std::move(rows), grid.sort_by);

  std::string csv = "cell,arch,mode,aggregator,loss,params,auc_mean,auc_std,accuracy_mean,accuracy_std,"
                    "recall_t2_mean,recall_t2_std,recall_t3_mean,recall_t3_std,completed,failed\n";
  for (const auto& r : rows) {
    const auto& s = r.summary;
    csv += fmt::format("{},{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n",
                       r.cell, r.arch, r.mode, r.aggregator, r.loss, r.params, s.auc.mean, s.auc.std,
                       s.accuracy.mean, s.accuracy.std, s.recall_t2.mean, s.recall_t2.std, s.recall_t3.mean,
                       s.recall_t3.std, s.completed, s.failed);
  }
  write_atomically(grid.output_dir / "ablation.csv", csv);
  write_atomically(grid.output_dir / "ablation.txt", format_ablation_table(rows));
  return rows;
}

}  // namespace anivol
