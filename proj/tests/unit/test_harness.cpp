#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "anivol/data/phantom.hpp"
#include "anivol/data/preprocess.hpp"
#include "anivol/data/sampling.hpp"
#include "anivol/harness/baseline.hpp"
#include "anivol/harness/classifier.hpp"
#include "anivol/harness/config.hpp"
#include "anivol/harness/experiment.hpp"
#include "anivol/harness/grad_audit.hpp"
#include "anivol/harness/metrics.hpp"

using namespace anivol;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("anivol_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// (2·wins + ties) / (2·P·N) over every positive/negative pair
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    ++p;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
    }
  }
  for (int v : y) n += v == 0;
  return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

/// Tiny phantoms: k=2 folds of f-R2D run in seconds.
ExperimentConfig small_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.arch = "f-R2D";
  c.mode = ModelMode::slice;
  c.aggregator.reset();
  c.epochs = 1;
  c.batch_size = 4;
  c.seed = 3;
  c.fold_seed = 3;
  c.folds = 2;
  PhantomConfig p;
  p.n = 12;
  p.side = 32;
  p.min_depth = 4;
  p.max_depth = 6;
  p.seed = 5;
  c.phantoms = p;
  c.side = 32;
  c.tta = 1;
  c.augmentation = AugmentationPolicy::standard(3);
  c.output_dir = scratch(name);
  return c;
}

}  // namespace

TEST(Auc, PerfectSeparationIsOne) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(compute_auc(s, y), 1.0);
}

TEST(Auc, AllTiesIsHalf) {
  const std::vector<double> s(6, 0.3);
  const std::vector<int> y{0, 1, 0, 1, 1, 0};
  EXPECT_EQ(compute_auc(s, y), 0.5);
}

TEST(Auc, ThreeWinsOneLoss) {
  const std::vector<double> s{0.2, 0.6, 0.4, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(compute_auc(s, y), 0.75);
}

TEST(Auc, MatchesPairwiseOracleExactly) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    // coarse scores so ties are common
    std::uniform_int_distribution<int> level(0, seed % 2 ? 5 : 1000);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = level(rng) / 10.0;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_EQ(compute_auc(s, y), pairwise_auc(s, y)) << "seed " << seed;
  }
}

TEST(Auc, InvariantUnderStrictlyMonotoneMaps) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<double> s(50), a(50), b(50);
    std::vector<int> y(50);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(nd(rng) * 4.0) / 4.0;
      a[i] = std::exp(3.0 * s[i]) + 7.0;
      b[i] = -1.0 / (1.0 + std::exp(-s[i])) * -2.0;
      y[i] = static_cast<int>(i % 2);
    }
    EXPECT_EQ(compute_auc(s, y), compute_auc(a, y));
    EXPECT_EQ(compute_auc(s, y), compute_auc(b, y));
  }
}

TEST(Auc, RejectsSingleClassAndNaN) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(compute_auc(s, std::vector<int>{1, 1}), std::invalid_argument);
  EXPECT_THROW(compute_auc(std::vector<double>{0.1, std::nan("")}, std::vector<int>{0, 1}), std::invalid_argument);
  EXPECT_THROW(compute_auc(s, std::vector<int>{0}), std::invalid_argument);
}

TEST(Recalls, AllCorrect) {
  const Recalls r = compute_recalls(std::vector<double>{0.1, 0.9, 0.7}, std::vector<int>{0, 1, 1});
  EXPECT_EQ(r.recall_t2, 1.0);
  EXPECT_EQ(r.recall_t3, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Recalls, AllPredictedT3) {
  const Recalls r = compute_recalls(std::vector<double>{0.6, 0.9, 0.5}, std::vector<int>{0, 1, 0});
  EXPECT_EQ(r.recall_t3, 1.0);
  EXPECT_EQ(r.recall_t2, 0.0);
}

TEST(Recalls, TwoOfThreeAndThreeOfFour) {
  const std::vector<double> s{0.1, 0.2, 0.7, 0.9, 0.8, 0.6, 0.3};
  const std::vector<int> y{0, 0, 0, 1, 1, 1, 1};
  const Recalls r = compute_recalls(s, y);
  EXPECT_NEAR(r.recall_t2, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.recall_t3, 0.75);
  EXPECT_NEAR(r.accuracy, 5.0 / 7.0, 1e-15);
  EXPECT_EQ(r.n_t2, 3u);
  EXPECT_EQ(r.n_t3, 4u);
}

TEST(Recalls, AccuracyIsRecallWeightedAverage) {
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u;
    std::vector<double> s(31);
    std::vector<int> y(31);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u(rng);
      y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng() % 2);
    }
    const Recalls r = compute_recalls(s, y);
    const double n = static_cast<double>(r.n_t2 + r.n_t3);
    EXPECT_NEAR(r.accuracy, (r.recall_t2 * r.n_t2 + r.recall_t3 * r.n_t3) / n, 1e-15);
  }
}

TEST(MeanStd, PopulationConvention) {
  const MeanStd m = mean_std(std::vector<double>{1.0, 3.0});
  EXPECT_EQ(m.mean, 2.0);
  EXPECT_EQ(m.std, 1.0);
  EXPECT_TRUE(std::isnan(mean_std(std::vector<double>{}).mean));
}

TEST(Config, SliceModeForbidsAggregator) {
  ExperimentConfig c = small_config("cfg_slice");
  c.aggregator = AggregatorKind::att;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, VolumeModeRequiresAggregator) {
  ExperimentConfig c = small_config("cfg_volume");
  c.mode = ModelMode::volume;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.aggregator = AggregatorKind::mxp;
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ExactlyOneDataSource) {
  ExperimentConfig c = small_config("cfg_source");
  c.dataset = "somewhere";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.phantoms.reset();
  EXPECT_NO_THROW(c.validate());
  c.dataset.reset();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = small_config("cfg_round");
  c.loss.recipe = LossRecipe::focal_triplet;
  c.loss.triplet_margin = 0.3;
  const nlohmann::json j = to_json(c);
  const ExperimentConfig back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
}

TEST(Config, DefaultsAndUnknownKeys) {
  const ExperimentConfig c =
      config_from_json(nlohmann::json{{"name", "d"}, {"seed", 9}, {"phantoms", nlohmann::json::object()}});
  EXPECT_EQ(c.arch, "f-rMC5");
  EXPECT_EQ(c.mode, ModelMode::volume);
  EXPECT_EQ(c.aggregator, AggregatorKind::bilinear);
  EXPECT_EQ(c.lr, 0.01);
  EXPECT_EQ(c.weight_decay, 0.01);
  EXPECT_EQ(c.fold_seed, 9u);
  EXPECT_EQ(c.output_dir, fs::path("runs/d"));
  EXPECT_THROW(config_from_json(nlohmann::json{{"phantoms", nlohmann::json::object()}, {"learning_rate", 0.1}}),
               std::invalid_argument);
  EXPECT_THROW(config_from_json(nlohmann::json{{"phantoms", nlohmann::json::object()},
                                               {"loss", {{"recipe", "focal"}, {"gama", 2}}}}),
               std::invalid_argument);
}

TEST(Classifier, OutputsFollowInputOrderAcrossDepthGroups) {
  PhantomConfig p;
  p.n = 6;
  p.side = 32;
  p.min_depth = 4;
  p.max_depth = 7;
  p.seed = 11;
  std::vector<Volume> volumes;
  for (const auto& v : generate_phantom_dataset(p).volumes) volumes.push_back(prepare(v, 32));
  for (auto mode : {ModelMode::volume, ModelMode::slice}) {
    std::optional<AggregatorKind> agg;
    if (mode == ModelMode::volume) agg = AggregatorKind::att;
    Classifier clf("f-R2D", mode, agg, 4);
    std::vector<const Volume*> forward, reversed;
    for (const auto& v : volumes) forward.push_back(&v);
    reversed.assign(forward.rbegin(), forward.rend());
    const auto a = clf.probabilities(forward);
    const auto b = clf.probabilities(reversed);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[a.size() - 1 - i]);
  }
}

TEST(Classifier, SliceModeRowsAreRepresentativeSlices) {
  PhantomConfig p;
  p.n = 4;
  p.side = 32;
  p.min_depth = 4;
  p.max_depth = 5;
  std::vector<Volume> volumes;
  for (const auto& v : generate_phantom_dataset(p).volumes) volumes.push_back(prepare(v, 32));
  Classifier clf("f-R2D", ModelMode::slice, std::nullopt, 1);
  std::vector<const Volume*> ptrs;
  std::size_t expected = 0;
  for (const auto& v : volumes) {
    ptrs.push_back(&v);
    expected += v.representative_slices.size();
  }
  const auto rows = clf.forward(ptrs, NormMode::eval);
  ASSERT_EQ(rows.labels.size(), expected);
  EXPECT_EQ(rows.embeddings.shape(), (Shape{expected, 256}));
  for (std::size_t r = 0; r < rows.owner.size(); ++r) EXPECT_EQ(rows.labels[r], volumes[rows.owner[r]].label);
}

TEST(Experiment, TwoFoldSmokeRun) {
  const ExperimentConfig c = small_config("smoke");
  const ExperimentResult r = run_experiment(c);
  ASSERT_EQ(r.fold_results.size(), 2u);
  for (const auto& f : r.fold_results) {
    ASSERT_FALSE(f.failed) << f.message;
    for (double m : {f.auc, f.accuracy, f.recall_t2, f.recall_t3}) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
    const double n = static_cast<double>(f.n_t2 + f.n_t3);
    EXPECT_NEAR(f.accuracy, (f.recall_t2 * f.n_t2 + f.recall_t3 * f.n_t3) / n, 1e-15);
  }
  EXPECT_EQ(r.summary.completed, 2u);
  for (const char* file : {"config.resolved.json", "folds.json", "predictions_fold0.csv", "predictions_fold1.csv",
                           "train_log.csv", "metrics.csv", "metrics.txt", "checkpoints/fold0.ckpt",
                           "checkpoints/fold1.ckpt"}) {
    EXPECT_TRUE(fs::exists(c.output_dir / file)) << file;
  }
  EXPECT_NE(slurp(c.output_dir / "metrics.txt").find("population standard deviation"), std::string::npos);
  // the resolved config reproduces the run's config
  std::ifstream in(c.output_dir / "config.resolved.json");
  EXPECT_EQ(to_json(config_from_json(nlohmann::json::parse(in))), to_json(c));
}

TEST(Experiment, RepeatRunIsByteIdentical) {
  ExperimentConfig a = small_config("repeat_a");
  a.mode = ModelMode::volume;
  a.aggregator = AggregatorKind::bilinear;
  a.loss.recipe = LossRecipe::focal_center;
  ExperimentConfig b = a;
  b.output_dir = scratch("repeat_b");
  run_experiment(a);
  run_experiment(b);
  for (const char* file : {"metrics.csv", "metrics.txt", "predictions_fold0.csv", "train_log.csv",
                           "checkpoints/fold0.ckpt", "checkpoints/fold1.ckpt"}) {
    EXPECT_EQ(slurp(a.output_dir / file), slurp(b.output_dir / file)) << file;
  }
}

TEST(Experiment, HoldOutNeverFeedsGradients) {
  ExperimentConfig c = small_config("leak");
  c.folds = 3;
  c.epochs = 2;
  std::size_t calls = 0;
  RunOptions options;
  options.write_outputs = false;
  options.on_fold_ids = [&](std::size_t, const std::vector<std::string>& trained,
                            const std::vector<std::string>& held_out) {
    ++calls;
    const std::set<std::string> t(trained.begin(), trained.end());
    EXPECT_FALSE(trained.empty());
    for (const auto& id : held_out) EXPECT_FALSE(t.contains(id)) << id;
  };
  run_experiment(c, options);
  EXPECT_EQ(calls, 3u);
}

TEST(Experiment, DivergenceIsReportedAsFailedFold) {
  ExperimentConfig c = small_config("diverge");
  c.lr = 1e200;
  c.epochs = 3;
  const ExperimentResult r = run_experiment(c);
  EXPECT_EQ(r.summary.failed, 2u);
  EXPECT_EQ(r.summary.completed, 0u);
  for (const auto& f : r.fold_results) {
    EXPECT_TRUE(f.failed);
    EXPECT_NE(f.message.find("loss became"), std::string::npos) << f.message;
  }
  const std::string csv = slurp(c.output_dir / "metrics.csv");
  EXPECT_NE(csv.find("0,failed"), std::string::npos);
  EXPECT_NE(slurp(c.output_dir / "metrics.txt").find("2 failed"), std::string::npos);
}

TEST(Ablation, RejectsUnpairedCells) {
  AblationGrid grid;
  grid.cells = {small_config("pair_a"), small_config("pair_b")};
  EXPECT_NO_THROW(check_paired(grid));
  grid.cells[1].fold_seed = 99;
  EXPECT_THROW(check_paired(grid), std::invalid_argument);
  grid.cells[1] = small_config("pair_b");
  grid.cells[1].phantoms->seed = 1234;
  EXPECT_THROW(check_paired(grid), std::invalid_argument);
}

TEST(Ablation, SortIsDescendingAndStable) {
  std::vector<AblationRow> rows(4);
  const double aucs[] = {0.7, 0.9, 0.7, std::nan("")};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].cell = "c" + std::to_string(i);
    rows[i].summary.auc.mean = aucs[i];
    rows[i].params = 10 - i;
  }
  const auto by_auc = sort_rows(rows, "auc");
  EXPECT_EQ(by_auc[0].cell, "c1");
  EXPECT_EQ(by_auc[1].cell, "c0");
  EXPECT_EQ(by_auc[2].cell, "c2");
  EXPECT_EQ(by_auc[3].cell, "c3");
  EXPECT_EQ(sort_rows(rows, "order")[2].cell, "c2");
  EXPECT_EQ(sort_rows(rows, "params")[0].cell, "c0");
  EXPECT_THROW(sort_rows(rows, "loss"), std::invalid_argument);
}

TEST(Ablation, GridFromJsonMergesBase) {
  const nlohmann::json j = {
      {"name", "g"},
      {"base", {{"arch", "f-R2D"}, {"mode", "slice"}, {"phantoms", {{"n", 20}}}, {"loss", {{"recipe", "focal"}}}}},
      {"cells", {nlohmann::json::object(), {{"loss", {{"recipe", "focal+center"}}}}}}};
  const AblationGrid grid = grid_from_json(j);
  ASSERT_EQ(grid.cells.size(), 2u);
  EXPECT_EQ(grid.cells[1].loss.recipe, LossRecipe::focal_center);
  EXPECT_EQ(grid.cells[1].arch, "f-R2D");
  EXPECT_NE(grid.cells[0].name, grid.cells[1].name);
  EXPECT_EQ(grid.cells[1].output_dir, fs::path("runs/g") / grid.cells[1].name);
  nlohmann::json dup = j;
  dup["cells"] = {nlohmann::json::object(), nlohmann::json::object()};
  EXPECT_THROW(grid_from_json(dup), std::invalid_argument);
}

TEST(Ablation, SingleCellGridEqualsExperiment) {
  AblationGrid grid;
  grid.name = "single";
  grid.output_dir = scratch("single_grid");
  ExperimentConfig cell = small_config("single_cell");
  cell.output_dir = grid.output_dir / cell.name;
  grid.cells = {cell};
  const auto rows = run_ablation(grid);
  ASSERT_EQ(rows.size(), 1u);

  ExperimentConfig direct = small_config("single_cell");
  direct.output_dir = scratch("single_direct");
  const ExperimentResult r = run_experiment(direct);
  EXPECT_EQ(rows[0].summary.auc.mean, r.summary.auc.mean);
  EXPECT_EQ(rows[0].summary.accuracy.std, r.summary.accuracy.std);
  EXPECT_EQ(rows[0].params, r.parameter_count);
  EXPECT_EQ(slurp(cell.output_dir / "metrics.csv"), slurp(direct.output_dir / "metrics.csv"));
  EXPECT_TRUE(fs::exists(grid.output_dir / "ablation.csv"));
  EXPECT_NE(slurp(grid.output_dir / "ablation.txt").find("±"), std::string::npos);
}

TEST(Baseline, LogisticRegressionSeparatesLinearData) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    const int label = i % 2;
    x.push_back({nd(rng) + 3.0 * label, nd(rng)});
    y.push_back(label);
  }
  LogisticRegression model;
  model.fit(x, y);
  std::vector<double> s;
  for (const auto& row : x) s.push_back(model.probability(row));
  EXPECT_GT(compute_auc(s, y), 0.95);
  EXPECT_GT(model.probability({6.0, 0.0}), 0.9);
  EXPECT_LT(model.probability({-3.0, 0.0}), 0.1);
}

TEST(GradAudit, CoversEveryModelCase) {
  const auto cases = all_grad_cases();
  EXPECT_EQ(cases.size(), 11u * 4u * 3u);
  std::set<std::string> labels;
  for (const auto& c : cases) labels.insert(c.label());
  EXPECT_EQ(labels.size(), cases.size());
}

TEST(GradAudit, OpsPassOnOneSeed) {
  for (const auto& op : audited_ops()) {
    const OpAuditResult r = audit_op(op, 0);
    EXPECT_GT(r.report.checked, 0u) << op;
    EXPECT_LE(r.report.max_relative_error, kGradTolerance) << op;
  }
}

TEST(GradAudit, EndToEndBilinearFocalTriplet) {
  const GradAuditResult r = audit_gradients({"f-rMC5", AggregatorKind::bilinear, LossRecipe::focal_triplet}, 0, {});
  EXPECT_EQ(r.report.checked, 1u);
  EXPECT_LE(r.report.max_relative_error, kGradTolerance) << r.worst_parameter;
}
