#include "anivol/objectives/losses.hpp"

#include <cmath>
#include <limits>
#include <spdlog/spdlog.h>
#include <stdexcept>
#include <string>

#include "anivol/aggregation/aggregate.hpp"
#include "anivol/tensor/ops.hpp"

namespace anivol {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void check_labels(Labels labels, std::size_t n, const char* op) {
  if (labels.size() != n) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument(std::string(op) + ": labels must be 0 or 1");
  }
}

/// log σ(u), stable for large |u|.
double log_sigmoid(double u) { return u >= 0.0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u)); }

double stable_sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace

// --- focal -------------------------------------------------------------------

Var focal_loss(const Var& logits, Labels labels, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal_loss: gamma must be non-negative");
  const std::size_t n = logits.size();
  if (logits.shape().size() > 2 || (logits.shape().size() == 2 && logits.shape()[1] != 1)) {
    throw std::invalid_argument("focal_loss: logits must be [N] or [N,1], got " + to_string(logits.shape()));
  }
  check_labels(labels, n, "focal_loss");
  const double log_floor = std::log(kProbabilityFloor);

  std::vector<double> grad(n);
  std::vector<std::uint8_t> clamped(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = labels[i] == 1 ? 1.0 : -1.0;
    const double u = sign * logits.value()[i];
    const double p = stable_sigmoid(u);
    const double q = stable_sigmoid(-u);  // 1 − p without cancellation
    double log_p = log_sigmoid(u);
    clamped[i] = log_p < log_floor;
    const double weight = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    // d/du[−q^γ log p] = q^γ (γ p log p − q); the log term is constant once clamped
    if (clamped[i]) {
      log_p = log_floor;
      grad[i] = sign * weight * gamma * p * log_p;
    } else {
      grad[i] = sign * weight * (gamma * p * log_p - q);
    }
    total -= weight * log_p;
  }
  if (auto* trace = active_branch_trace()) trace->record(std::span<const std::uint8_t>(clamped));
  const double inv_n = 1.0 / static_cast<double>(n);
  return make_op_result(Tensor::scalar(total * inv_n), {logits},
                        [logits, grad = std::move(grad), inv_n](const Tensor& g) {
                          Tensor gl(logits.shape());
                          for (std::size_t i = 0; i < gl.size(); ++i) gl[i] = g[0] * grad[i] * inv_n;
                          logits.accumulate_grad(gl);
                        });
}

// --- center ------------------------------------------------------------------

CenterState::CenterState(std::size_t embedding_dim, double alpha_) : centers({2, embedding_dim}, 0.0), alpha(alpha_) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("center update rate must lie in [0, 1]");
}

Var center_loss(const Var& embeddings, Labels labels, CenterState& state, bool update) {
  if (embeddings.shape().size() != 2 || embeddings.shape()[1] != state.centers.shape()[1]) {
    throw std::invalid_argument("center_loss: embeddings " + to_string(embeddings.shape()) +
                                " do not match centers " + to_string(state.centers.shape()));
  }
  const std::size_t n = embeddings.shape()[0], e = embeddings.shape()[1];
  check_labels(labels, n, "center_loss");
  const double* x = embeddings.value().data();

  Tensor diff({n, e});  // x_i − c_{y_i}
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = state.centers.data() + static_cast<std::size_t>(labels[i]) * e;
    for (std::size_t j = 0; j < e; ++j) {
      diff[i * e + j] = x[i * e + j] - c[j];
      total += 0.5 * diff[i * e + j] * diff[i * e + j];
    }
  }

  if (update) {
    Tensor delta({2, e}, 0.0);
    std::array<std::size_t, 2> count{0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(labels[i]);
      ++count[y];
      for (std::size_t j = 0; j < e; ++j) delta[y * e + j] -= diff[i * e + j];
    }
    for (std::size_t y = 0; y < 2; ++y) {
      if (count[y] == 0) continue;
      const double scale = state.alpha / (1.0 + static_cast<double>(count[y]));
      for (std::size_t j = 0; j < e; ++j) state.centers[y * e + j] -= scale * delta[y * e + j];
    }
  }

  return make_op_result(Tensor::scalar(total), {embeddings}, [embeddings, diff = std::move(diff)](const Tensor& g) {
    Tensor gx = diff;
    for (auto& v : gx.values()) v *= g[0];
    embeddings.accumulate_grad(gx);
  });
}

// --- triplet -----------------------------------------------------------------

MiningMode parse_mining_mode(std::string_view token) {
  if (token == "batch-hard") return MiningMode::batch_hard;
  if (token == "semi-hard") return MiningMode::semi_hard;
  throw std::invalid_argument("unknown mining mode '" + std::string(token) + "'; expected batch-hard or semi-hard");
}

std::string_view to_string(MiningMode mode) { return mode == MiningMode::batch_hard ? "batch-hard" : "semi-hard"; }

Tensor squared_distances(const Tensor& embeddings) {
  const std::size_t n = embeddings.shape()[0], e = embeddings.shape()[1];
  Tensor d({n, n}, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        const double t = embeddings[a * e + j] - embeddings[b * e + j];
        sq += t * t;
      }
      d[a * n + b] = d[b * n + a] = sq;
    }
  }
  return d;
}

std::vector<Triplet> mine_triplets(const Tensor& dist, Labels labels, const TripletOptions& options) {
  const std::size_t n = labels.size();
  if (dist.shape() != Shape{n, n}) throw std::invalid_argument("mine_triplets: distance matrix must be [N,N]");
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, hardest_neg = n, farthest_neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double dj = dist[a * n + j];
      if (labels[j] == labels[a]) {
        if (pos == n || dj > dist[a * n + pos]) pos = j;
      } else {
        if (hardest_neg == n || dj < dist[a * n + hardest_neg]) hardest_neg = j;
        if (farthest_neg == n || dj > dist[a * n + farthest_neg]) farthest_neg = j;
      }
    }
    if (pos == n || hardest_neg == n) continue;
    std::size_t neg = hardest_neg;
    if (options.mining == MiningMode::semi_hard) {
      const double dp = dist[a * n + pos];
      std::size_t semi = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a || labels[j] == labels[a]) continue;
        const double dj = dist[a * n + j];
        if (dj > dp && (semi == n || dj < dist[a * n + semi])) semi = j;
      }
      neg = semi != n ? semi : farthest_neg;
    }
    out.push_back({a, pos, neg});
  }
  return out;
}

Var triplet_loss(const Var& embeddings, Labels labels, const TripletOptions& options) {
  if (embeddings.shape().size() != 2) {
    throw std::invalid_argument("triplet_loss: embeddings must be [N,E], got " + to_string(embeddings.shape()));
  }
  const std::size_t n = embeddings.shape()[0], e = embeddings.shape()[1];
  check_labels(labels, n, "triplet_loss");
  const Var f = options.normalize ? l2_normalize_rows(embeddings) : embeddings;
  const Tensor& fv = f.value();
  const auto triplets = mine_triplets(squared_distances(fv), labels, options);
  if (triplets.empty()) {
    spdlog::warn("triplet_loss: no anchor in a batch of {} has both a positive and a negative; loss is 0", n);
    return Var(Tensor::scalar(0.0));
  }

  std::vector<std::size_t> decisions;
  double total = 0.0;
  std::vector<std::uint8_t> active(triplets.size());
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto [a, p, q] = triplets[t];
    double dp = 0.0, dn = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      dp += (fv[a * e + j] - fv[p * e + j]) * (fv[a * e + j] - fv[p * e + j]);
      dn += (fv[a * e + j] - fv[q * e + j]) * (fv[a * e + j] - fv[q * e + j]);
    }
    const double hinge = dp - dn + options.margin;
    active[t] = hinge > 0.0;
    if (active[t]) total += hinge;
    decisions.insert(decisions.end(), {a, p, q});
  }
  if (auto* trace = active_branch_trace()) {
    trace->record(std::span<const std::size_t>(decisions));
    trace->record(std::span<const std::uint8_t>(active));
  }
  const double inv = 1.0 / static_cast<double>(triplets.size());
  return make_op_result(Tensor::scalar(total * inv), {f},
                        [f, triplets, active = std::move(active), inv, e](const Tensor& g) {
                          Tensor gf(f.shape());
                          const Tensor& v = f.value();
                          const double s = 2.0 * g[0] * inv;
                          for (std::size_t t = 0; t < triplets.size(); ++t) {
                            if (!active[t]) continue;
                            const auto [a, p, q] = triplets[t];
                            for (std::size_t j = 0; j < e; ++j) {
                              gf[a * e + j] += s * (v[q * e + j] - v[p * e + j]);
                              gf[p * e + j] -= s * (v[a * e + j] - v[p * e + j]);
                              gf[q * e + j] += s * (v[a * e + j] - v[q * e + j]);
                            }
                          }
                          f.accumulate_grad(gf);
                        });
}

// --- joint -------------------------------------------------------------------

LossRecipe parse_recipe(std::string_view token) {
  if (token == "focal") return LossRecipe::focal;
  if (token == "focal+center") return LossRecipe::focal_center;
  if (token == "focal+triplet") return LossRecipe::focal_triplet;
  throw std::invalid_argument("unknown loss recipe '" + std::string(token) +
                              "'; expected focal, focal+center or focal+triplet");
}

std::string_view to_string(LossRecipe recipe) {
  switch (recipe) {
    case LossRecipe::focal:
      return "focal";
    case LossRecipe::focal_center:
      return "focal+center";
    case LossRecipe::focal_triplet:
      return "focal+triplet";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be non-negative");
  if (!(center_alpha >= 0.0 && center_alpha <= 1.0)) throw std::invalid_argument("center_alpha must lie in [0, 1]");
  if (!(center_lambda >= 0.0)) throw std::invalid_argument("center_lambda must be non-negative");
  if (!(triplet_margin >= 0.0)) throw std::invalid_argument("triplet_margin must be non-negative");
  if (!(triplet_lambda >= 0.0)) throw std::invalid_argument("triplet_lambda must be non-negative");
}

LossTerms joint_loss(const Var& logits, const Var& embeddings, Labels labels, const LossConfig& config,
                     CenterState* centers, bool update_centers) {
  LossTerms terms;
  Var focal = focal_loss(logits, labels, config.gamma);
  terms.focal = focal.value().item();
  switch (config.recipe) {
    case LossRecipe::focal:
      terms.total = focal;
      break;
    case LossRecipe::focal_center: {
      if (centers == nullptr) throw std::invalid_argument("focal+center needs a CenterState");
      Var center = center_loss(embeddings, labels, *centers, update_centers);
      terms.center = center.value().item();
      terms.total = add(focal, scale(center, config.center_lambda));
      break;
    }
    case LossRecipe::focal_triplet: {
      Var triplet = triplet_loss(embeddings, labels,
                                 TripletOptions{config.triplet_margin, config.triplet_normalize, config.mining});
      terms.triplet = triplet.value().item();
      terms.total = add(focal, scale(triplet, config.triplet_lambda));
      break;
    }
  }
  return terms;
}

}  // namespace anivol
