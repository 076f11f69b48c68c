#include "anivol/encoders/stage_plan.hpp"

#include <stdexcept>

namespace anivol {

namespace {

constexpr std::array<std::string_view, 11> kNames{
    "f-R2D", "f-R3D", "f-R(2+1)D", "f-MC2", "f-MC3", "f-MC4", "f-MC5", "f-rMC2", "f-rMC3", "f-rMC4", "f-rMC5"};

StagePlan mixed(std::size_t x, LayerKind early, LayerKind late) {
  StagePlan plan = StagePlan::uniform(late, late);
  for (std::size_t layer = 1; layer < x; ++layer) {
    if (layer == 1) {
      plan.stem = early;
    } else {
      plan.stages[layer - 2].kind = early;
    }
  }
  return plan;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::planar:
      return "2D";
    case LayerKind::volumetric:
      return "3D";
    case LayerKind::factorized:
      return "(2+1)D";
  }
  return "?";
}

LayerKind StagePlan::layer(std::size_t index) const {
  if (index < 1 || index > kLayers) throw std::out_of_range("layer index must be in 1..5");
  return index == 1 ? stem : stages[index - 2].kind;
}

bool StagePlan::layer_spans_depth(std::size_t index) const { return layer(index) != LayerKind::planar; }

void StagePlan::validate() const {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].blocks != 2) throw std::logic_error("every stage has two basic blocks");
    if (stages[s].out_channels != kWidths[s]) throw std::logic_error("stage widths are fixed at 32/64/128/256");
  }
}

StagePlan StagePlan::uniform(LayerKind stem, LayerKind stage_kind) {
  StagePlan plan;
  plan.stem = stem;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) plan.stages[s] = StageSpec{stage_kind, 2, kWidths[s]};
  return plan;
}

std::span<const std::string_view> variant_names() { return kNames; }

EncoderVariant make_variant(std::string_view name) {
  EncoderVariant v{std::string(name), {}};
  if (name == "f-R2D") {
    v.plan = StagePlan::uniform(LayerKind::planar, LayerKind::planar);
  } else if (name == "f-R3D") {
    v.plan = StagePlan::uniform(LayerKind::volumetric, LayerKind::volumetric);
  } else if (name == "f-R(2+1)D") {
    v.plan = StagePlan::uniform(LayerKind::factorized, LayerKind::factorized);
  } else if (name.size() == 5 && name.substr(0, 4) == "f-MC" && name[4] >= '2' && name[4] <= '5') {
    v.plan = mixed(static_cast<std::size_t>(name[4] - '0'), LayerKind::volumetric, LayerKind::planar);
  } else if (name.size() == 6 && name.substr(0, 5) == "f-rMC" && name[5] >= '2' && name[5] <= '5') {
    v.plan = mixed(static_cast<std::size_t>(name[5] - '0'), LayerKind::planar, LayerKind::volumetric);
  } else {
    std::string valid;
    for (auto n : kNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw std::invalid_argument("unknown encoder variant '" + std::string(name) + "'; valid names: " + valid);
  }
  v.plan.validate();
  return v;
}

}  // namespace anivol
