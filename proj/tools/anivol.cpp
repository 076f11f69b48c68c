// anivol: parameter counts, architecture tables, phantom data, training,
// ablation grids and gradient audits from the command line.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "anivol/data/phantom.hpp"
#include "anivol/data/sampling.hpp"
#include "anivol/data/volume.hpp"
#include "anivol/encoders/encoder.hpp"
#include "anivol/encoders/stage_plan.hpp"
#include "anivol/harness/baseline.hpp"
#include "anivol/harness/experiment.hpp"
#include "anivol/harness/grad_audit.hpp"

namespace {

using namespace anivol;

std::string grouped(std::size_t n) {
  std::string digits = std::to_string(n), out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::string format_summary(const ExperimentSummary& s) {
  return fmt::format("AUC {:.4f} ± {:.4f}  Acc {:.4f} ± {:.4f}  Rec(T2) {:.4f} ± {:.4f}  Rec(T3) {:.4f} ± {:.4f}  "
                     "({} completed, {} failed)",
                     s.auc.mean, s.auc.std, s.accuracy.mean, s.accuracy.std, s.recall_t2.mean, s.recall_t2.std,
                     s.recall_t3.mean, s.recall_t3.std, s.completed, s.failed);
}

int cmd_params(const std::string& arch) {
  std::vector<std::string> names;
  if (!arch.empty()) {
    names.push_back(arch);
  } else {
    for (auto n : variant_names()) names.emplace_back(n);
  }
  for (const auto& name : names) {
    const SliceModel model = build_variant(name, 0);
    std::printf("%-10s %12s\n", name.c_str(), grouped(model.state().parameter_count()).c_str());
  }
  return 0;
}

int cmd_describe(const std::string& arch, std::size_t slices, std::size_t side) {
  const SliceModel model = build_variant(arch, 0);
  std::fputs(describe_table(model, slices, side).c_str(), stdout);
  return 0;
}

int cmd_gen_phantoms(PhantomConfig config, const std::string& out) {
  config.validate();
  const PhantomDataset data = generate_phantom_dataset(config);
  save_dataset(data.volumes, out);
  std::size_t t3 = 0;
  for (const auto& v : data.volumes) t3 += v.label == 1;
  std::printf("wrote %zu volumes (%zu T2, %zu T3) to %s\n", data.volumes.size(), data.volumes.size() - t3, t3,
              out.c_str());
  return 0;
}

int cmd_train(const std::string& path, const std::string& output_dir) {
  ExperimentConfig config = load_config(path);
  if (!output_dir.empty()) config.output_dir = output_dir;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult result = run_experiment(config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& f : result.fold_results) {
    if (f.failed) {
      std::printf("fold %zu  FAILED: %s\n", f.fold, f.message.c_str());
    } else {
      std::printf("fold %zu  AUC %.4f  Acc %.4f  Rec(T2) %.4f  Rec(T3) %.4f\n", f.fold, f.auc, f.accuracy,
                  f.recall_t2, f.recall_t3);
    }
  }
  std::printf("%s  %s params\n%s\n", config.arch.c_str(), grouped(result.parameter_count).c_str(),
              format_summary(result.summary).c_str());
  std::printf("%.1f s, outputs in %s\n", seconds, config.output_dir.string().c_str());
  return result.summary.failed == 0 ? 0 : 2;
}

int cmd_baseline(const std::string& path) {
  const ExperimentConfig config = load_config(path);
  const std::vector<Volume> volumes = load_volumes(config);
  const FoldAssignment folds = stratified_kfold(labels_of(volumes), config.folds, config.fold_seed);
  const BaselineResult r = logistic_baseline(volumes, folds, config.side);
  for (std::size_t f = 0; f < r.fold_auc.size(); ++f) std::printf("fold %zu  AUC %.4f\n", f, r.fold_auc[f]);
  std::printf("logistic regression on radial profiles: AUC %.4f ± %.4f\n", r.auc.mean, r.auc.std);
  return 0;
}

int cmd_ablate(const std::string& path) {
  const AblationGrid grid = load_grid(path);
  const std::vector<AblationRow> rows = run_ablation(grid);
  std::fputs(format_ablation_table(rows).c_str(), stdout);
  std::printf("outputs in %s\n", grid.output_dir.string().c_str());
  return 0;
}

int cmd_check_grads(std::size_t seeds, std::vector<std::string> archs, bool ops_only, bool models_only,
                    std::size_t coordinates, bool verbose) {
  std::size_t failures = 0;
  if (!models_only) {
    for (const auto& op : audited_ops()) {
      double worst = 0.0;
      std::size_t checked = 0;
      for (std::size_t s = 0; s < seeds; ++s) {
        const OpAuditResult r = audit_op(op, s);
        worst = std::max(worst, r.report.max_relative_error);
        checked += r.report.checked;
      }
      const bool ok = worst <= kGradTolerance;
      failures += !ok;
      std::printf("%-4s op %-22s worst %.2e over %zu coordinates\n", ok ? "ok" : "FAIL", op.c_str(), worst, checked);
    }
  }
  if (ops_only) return failures == 0 ? 0 : 1;

  GradAuditOptions options;
  options.check.max_coordinates = coordinates;
  for (const auto& c : all_grad_cases()) {
    if (!archs.empty() && std::find(archs.begin(), archs.end(), c.arch) == archs.end()) continue;
    double worst = 0.0;
    std::size_t checked = 0, skipped = 0, unresolved = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const GradAuditResult r = audit_gradients(c, s, options);
      checked += r.report.checked;
      skipped += r.report.skipped;
      unresolved += r.report.unresolved;
      if (verbose || r.report.max_relative_error > kGradTolerance) {
        std::printf("     seed %zu  err %.2e  analytic %.6e  numeric %.6e  %s\n", s, r.report.max_relative_error,
                    r.report.worst_analytic, r.report.worst_numeric, r.worst_parameter.c_str());
      }
      worst = std::max(worst, r.report.max_relative_error);
    }
    const bool ok = worst <= kGradTolerance && checked > 0;
    failures += !ok;
    std::printf("%-4s %-34s worst %.2e  checked %zu  skipped %zu (unresolved %zu)\n", ok ? "ok" : "FAIL",
                c.label().c_str(), worst, checked, skipped, unresolved);
    std::fflush(stdout);
  }
  std::printf("%zu failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anisotropic volume classification: encoders, aggregation, objectives and cross-validation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  std::string arch;
  auto* params = app.add_subcommand("params", "Parameter count of one or all encoder variants");
  params->add_option("--arch", arch, "Variant name, e.g. f-rMC5 (default: all)");

  std::size_t slices = 12, side = 64;
  auto* describe = app.add_subcommand("describe", "Per-layer table: kernel, stride, output shape, parameters");
  describe->add_option("--arch", arch, "Variant name")->required();
  describe->add_option("--slices", slices, "Input depth")->capture_default_str();
  describe->add_option("--side", side, "Input height and width")->capture_default_str();

  PhantomConfig phantom;
  std::string out;
  auto* gen = app.add_subcommand("gen-phantoms", "Write a synthetic T2/T3 phantom dataset");
  gen->add_option("--n", phantom.n, "Number of volumes")->capture_default_str();
  gen->add_option("--difficulty", phantom.difficulty, "0 (clean) to 1 (hard)")->capture_default_str();
  gen->add_option("--seed", phantom.seed, "Generator seed")->capture_default_str();
  gen->add_option("--side", phantom.side, "Height and width")->capture_default_str();
  gen->add_option("--balance", phantom.class_balance, "Fraction of T3 volumes")->capture_default_str();
  gen->add_option("--min-depth", phantom.min_depth, "Fewest slices")->capture_default_str();
  gen->add_option("--max-depth", phantom.max_depth, "Most slices")->capture_default_str();
  gen->add_option("--out", out, "Output directory")->required();

  std::string config_path, output_dir;
  auto* train = app.add_subcommand("train", "k-fold cross-validation of one configuration");
  train->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--output", output_dir, "Override output_dir");

  auto* baseline = app.add_subcommand("baseline", "Logistic regression on radial intensity profiles, same folds");
  baseline->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);

  std::string grid_path;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid and write comparison tables");
  ablate->add_option("--grid", grid_path, "Grid JSON")->required()->check(CLI::ExistingFile);

  std::size_t seeds = 20, coordinates = 1;
  std::vector<std::string> archs;
  bool ops_only = false, models_only = false, verbose = false;
  auto* grads = app.add_subcommand("check-grads", "Finite-difference audit of every op and end-to-end model");
  grads->add_option("--seeds", seeds, "Seeds per op and per model case")->capture_default_str();
  grads->add_option("--arch", archs, "Restrict model cases to these variants");
  grads->add_option("--coordinates", coordinates, "Sampled coordinates per model seed")->capture_default_str();
  grads->add_flag("--ops-only", ops_only, "Skip end-to-end models");
  grads->add_flag("--models-only", models_only, "Skip the op sweep");
  grads->add_flag("--verbose", verbose, "Print every seed");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::flush_on(spdlog::level::info);

  try {
    if (*params) return cmd_params(arch);
    if (*describe) return cmd_describe(arch, slices, side);
    if (*gen) return cmd_gen_phantoms(phantom, out);
    if (*train) return cmd_train(config_path, output_dir);
    if (*baseline) return cmd_baseline(config_path);
    if (*ablate) return cmd_ablate(grid_path);
    if (*grads) return cmd_check_grads(seeds, archs, ops_only, models_only, coordinates, verbose);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
