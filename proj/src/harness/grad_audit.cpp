#include "anivol/harness/grad_audit.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>

#include "anivol/data/seeding.hpp"
#include "anivol/encoders/layers.hpp"
#include "anivol/harness/classifier.hpp"
#include "anivol/tensor/batch_norm.hpp"
#include "anivol/tensor/conv.hpp"
#include "anivol/tensor/ops.hpp"
#include "anivol/tensor/pooling.hpp"

namespace anivol {

std::string GradCase::label() const {
  return arch + " " + std::string(to_string(aggregator)) + " " + std::string(to_string(recipe));
}

std::vector<GradCase> all_grad_cases() {
  std::vector<GradCase> cases;
  for (auto name : variant_names()) {
    for (auto agg : {AggregatorKind::avp, AggregatorKind::mxp, AggregatorKind::att, AggregatorKind::bilinear}) {
      for (auto recipe : {LossRecipe::focal, LossRecipe::focal_center, LossRecipe::focal_triplet}) {
        cases.push_back({std::string(name), agg, recipe});
      }
    }
  }
  return cases;
}

namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(const Shape& shape, double scale = 1.0, double offset = 0.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = offset + scale * normal_(rng_);
    return t;
  }
  Var leaf(const Shape& shape, double scale = 1.0, double offset = 0.0) {
    return Var(normal(shape, scale, offset), true);
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

// sum(out ⊙ P) for a fixed random P, so every output element matters
Var project(const Var& out, std::uint64_t seed) {
  Draw d(derive_seed(seed, {0x9e}));
  return sum(mul(out, Var(d.normal(out.shape()))));
}

struct OpCase {
  std::vector<Var> inputs;
  std::function<Var()> f;
};

using OpBuilder = std::function<OpCase(std::uint64_t)>;

const std::map<std::string, OpBuilder>& op_builders() {
  static const std::map<std::string, OpBuilder> builders = [] {
    std::map<std::string, OpBuilder> b;
    b["conv2d"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({2, 3, 5, 5}), w = d.leaf({4, 3, 3, 3});
      return OpCase{{x, w}, [=] { return project(conv2d(x, ConvSpec::planar(3, 4, 3), w), seed); }};
    };
    b["conv2d_strided"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({2, 2, 3, 6, 6}), w = d.leaf({3, 2, 3, 3});
      return OpCase{{x, w}, [=] { return project(conv2d(x, ConvSpec::planar(2, 3, 3, 2), w), seed); }};
    };
    b["conv3d"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({2, 2, 3, 5, 5}), w = d.leaf({3, 2, 3, 3, 3});
      return OpCase{{x, w}, [=] { return project(conv3d(x, ConvSpec::volumetric(2, 3, 3, 3), w), seed); }};
    };
    b["conv2plus1d"] = [](std::uint64_t seed) {
      Draw d(seed);
      Initializer init(derive_seed(seed, {0xc2}));
      auto unit = std::make_shared<Conv2Plus1D>("unit", 2, 3, 4, 3, 1, init);
      Var x = d.leaf({2, 2, 3, 5, 5});
      StateList state;
      unit->collect(state);
      std::vector<Var> inputs{x};
      for (const auto& p : state.parameters()) inputs.push_back(p.tensor);
      return OpCase{inputs, [=] { return project(unit->forward(x, NormMode::train), seed); }};
    };
    b["batch_norm"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({4, 3, 5}), gamma = d.leaf({3}, 0.5, 1.0), beta = d.leaf({3});
      return OpCase{{x, gamma, beta}, [=] {
                      Tensor mean({3}), var({3});
                      return project(batch_norm(x, gamma, beta, mean, var, NormMode::train), seed);
                    }};
    };
    b["relu"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({4, 6});
      return OpCase{{x}, [=] { return project(relu(x), seed); }};
    };
    b["sigmoid"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({4, 6}, 2.0);
      return OpCase{{x}, [=] { return project(sigmoid(x), seed); }};
    };
    b["max_pool_xy"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({2, 2, 2, 6, 6});
      return OpCase{{x}, [=] { return project(max_pool_xy(x), seed); }};
    };
    b["global_avg_pool_xy"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({2, 3, 2, 4, 4});
      return OpCase{{x}, [=] { return project(global_avg_pool_xy(x), seed); }};
    };
    b["fully_connected"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({3, 5}), w = d.leaf({1, 5}), bias = d.leaf({1});
      return OpCase{{x, w, bias}, [=] { return project(fully_connected(x, w, bias), seed); }};
    };
    for (auto kind : {AggregatorKind::avp, AggregatorKind::mxp, AggregatorKind::att, AggregatorKind::bilinear}) {
      b["aggregate_" + std::string(to_string(kind))] = [kind](std::uint64_t seed) {
        Draw d(seed);
        // post-ReLU features are non-negative
        Var x = d.leaf({3, 4, 5}, 0.3, 1.0);
        return OpCase{{x}, [=] { return project(aggregate(FeatureMatrix{x}, kind), seed); }};
      };
    }
    b["focal_loss"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var z = d.leaf({8, 1});
      return OpCase{{z}, [=] {
                      static const std::vector<int> labels{0, 1, 0, 1, 1, 0, 1, 0};
                      return focal_loss(z, labels);
                    }};
    };
    b["center_loss"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({6, 4});
      auto state = std::make_shared<CenterState>(4);
      state->centers = d.normal({2, 4});
      return OpCase{{x}, [=] {
                      static const std::vector<int> labels{0, 1, 0, 1, 1, 0};
                      return center_loss(x, labels, *state, false);
                    }};
    };
    b["triplet_loss"] = [](std::uint64_t seed) {
      Draw d(seed);
      Var x = d.leaf({6, 4});
      return OpCase{{x}, [=] {
                      static const std::vector<int> labels{0, 1, 0, 1, 1, 0};
                      return triplet_loss(x, labels);
                    }};
    };
    return b;
  }();
  return builders;
}

}  // namespace

std::vector<std::string> audited_ops() {
  std::vector<std::string> names;
  for (const auto& [name, builder] : op_builders()) names.push_back(name);
  return names;
}

OpAuditResult audit_op(const std::string& op, std::uint64_t seed) {
  const auto it = op_builders().find(op);
  if (it == op_builders().end()) throw std::invalid_argument("audit_op: unknown op '" + op + "'");
  OpCase c = it->second(derive_seed(seed, {0x0b}));
  GradCheckOptions check;
  check.step = 1e-4;
  return {op, seed, grad_check(c.f, c.inputs, check)};
}

GradAuditResult audit_gradients(const GradCase& grad_case, std::uint64_t seed, const GradAuditOptions& options) {
  Classifier clf(grad_case.arch, ModelMode::volume, grad_case.aggregator, derive_seed(seed, {0x9a}));

  std::mt19937_64 rng(derive_seed(seed, {0x70}));
  std::normal_distribution<double> normal;
  std::vector<Volume> volumes(options.batch);
  for (std::size_t i = 0; i < options.batch; ++i) {
    Volume& v = volumes[i];
    v.id = "toy" + std::to_string(i);
    v.depth = options.slices;
    v.height = v.width = options.side;
    v.voxels.resize(v.depth * v.plane_size());
    for (double& x : v.voxels) x = normal(rng);
    v.label = i < options.batch / 2 ? 0 : 1;
    v.representative_slices = {0};
  }
  std::vector<const Volume*> ptrs;
  for (const auto& v : volumes) ptrs.push_back(&v);

  LossConfig loss;
  loss.recipe = grad_case.recipe;
  std::optional<CenterState> centers;
  if (loss.recipe == LossRecipe::focal_center) {
    centers.emplace(clf.embedding_dim());
    // centers off the origin, at the scale of a unit-norm embedding
    const double scale = 0.5 / std::sqrt(static_cast<double>(clf.embedding_dim()));
    for (double& c : centers->centers.values()) c = scale * normal(rng);
  }

  StateList state = clf.state();
  std::vector<Var> inputs;
  std::vector<std::string> names;
  for (const auto& p : state.parameters()) {
    inputs.push_back(p.tensor);
    names.push_back(p.name);
  }
  const auto f = [&] {
    const auto rows = clf.forward(ptrs, NormMode::train);
    return joint_loss(rows.logits, rows.embeddings, rows.labels, loss, centers ? &*centers : nullptr, false).total;
  };
  GradCheckOptions check = options.check;
  check.seed = derive_seed(seed, {0xc0});
  GradAuditResult result;
  result.grad_case = grad_case;
  result.seed = seed;
  result.report = grad_check(f, inputs, check);
  if (result.report.checked > 0) result.worst_parameter = names[result.report.worst_input];
  return result;
}

}  // namespace anivol
