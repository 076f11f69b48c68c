#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "anivol/tensor/autograd.hpp"

namespace anivol {

/// Labels are 0 (T2) or 1 (T3).
using Labels = std::span<const int>;

/// mean_i −(1−p_i)^γ · log(max(p_i, 1e-12)), p_i = σ(z_i) for label 1 and
/// 1 − σ(z_i) for label 0. `logits` is [N] or [N,1].
Var focal_loss(const Var& logits, Labels labels, double gamma = 2.0);

/// Per-class feature centers c₀, c₁, kept off the autodiff tape.
struct CenterState {
  explicit CenterState(std::size_t embedding_dim, double alpha = 0.5);

  Tensor centers;  // [2, E]
  double alpha;
};

/// ½ Σ_i ‖x_i − c_{y_i}‖² over the batch (a sum, not a mean). With `update`
/// the centers then move by c_y ← c_y − α Σ_{i:y_i=y}(c_y − x_i)/(1 + n_y);
/// classes absent from the batch keep their center.
Var center_loss(const Var& embeddings, Labels labels, CenterState& state, bool update);

enum class MiningMode { batch_hard, semi_hard };

MiningMode parse_mining_mode(std::string_view token);
std::string_view to_string(MiningMode mode);

struct TripletOptions {
  double margin = 0.2;
  /// Project embeddings to the unit sphere before distances.
  bool normalize = true;
  MiningMode mining = MiningMode::batch_hard;
};

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
};

/// Selection over a squared-distance matrix [N,N]. batch_hard: farthest
/// positive, nearest negative. semi_hard: farthest positive, nearest negative
/// that is farther than that positive, falling back to the farthest negative
/// when none is. Anchors without a positive or a negative are omitted; ties go
/// to the lowest index.
std::vector<Triplet> mine_triplets(const Tensor& squared_distances, Labels labels, const TripletOptions& options);

/// Pairwise squared euclidean distances between the rows of [N,E].
Tensor squared_distances(const Tensor& embeddings);

/// Mean over mined anchors of max(0, ‖f−f⁺‖² − ‖f−f⁻‖² + margin). With no
/// valid anchor the loss is a constant 0 and a warning is logged.
Var triplet_loss(const Var& embeddings, Labels labels, const TripletOptions& options = {});

enum class LossRecipe { focal, focal_center, focal_triplet };

/// Tokens focal | focal+center | focal+triplet.
LossRecipe parse_recipe(std::string_view token);
std::string_view to_string(LossRecipe recipe);

struct LossConfig {
  LossRecipe recipe = LossRecipe::focal;
  double gamma = 2.0;
  double center_alpha = 0.5;
  double center_lambda = 0.003;
  double triplet_margin = 0.2;
  double triplet_lambda = 1.0;
  MiningMode mining = MiningMode::batch_hard;
  bool triplet_normalize = true;

  void validate() const;
};

struct LossTerms {
  Var total;
  double focal = 0.0;
  double center = 0.0;
  double triplet = 0.0;
};

/// focal, focal + λ_c·center or focal + λ_t·triplet; one scalar for one
/// backward pass. The center recipe needs `centers`.
LossTerms joint_loss(const Var& logits, const Var& embeddings, Labels labels, const LossConfig& config,
                     CenterState* centers, bool update_centers);

}  // namespace anivol
