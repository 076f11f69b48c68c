#include "anivol/harness/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "anivol/encoders/stage_plan.hpp"

namespace anivol {

namespace {

using nlohmann::json;

const std::set<std::string> kKeys{"name",  "arch",  "mode",   "aggregator", "loss",         "lr",
                                  "weight_decay", "epochs", "batch_size", "seed", "fold_seed", "folds",
                                  "dataset", "phantoms", "side", "tta", "augmentation", "output_dir",
                                  "save_checkpoints"};
const std::set<std::string> kLossKeys{"recipe",         "gamma",          "center_alpha", "center_lambda",
                                      "triplet_margin", "triplet_lambda", "mining",       "triplet_normalize"};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

LossConfig loss_from_json(const json& j) {
  reject_unknown(j, kLossKeys, "loss");
  LossConfig c;
  if (j.contains("recipe")) c.recipe = parse_recipe(j.at("recipe").get<std::string>());
  read(j, "gamma", c.gamma);
  read(j, "center_alpha", c.center_alpha);
  read(j, "center_lambda", c.center_lambda);
  read(j, "triplet_margin", c.triplet_margin);
  read(j, "triplet_lambda", c.triplet_lambda);
  if (j.contains("mining")) c.mining = parse_mining_mode(j.at("mining").get<std::string>());
  read(j, "triplet_normalize", c.triplet_normalize);
  return c;
}

json loss_to_json(const LossConfig& c) {
  return {{"recipe", to_string(c.recipe)},
          {"gamma", c.gamma},
          {"center_alpha", c.center_alpha},
          {"center_lambda", c.center_lambda},
          {"triplet_margin", c.triplet_margin},
          {"triplet_lambda", c.triplet_lambda},
          {"mining", to_string(c.mining)},
          {"triplet_normalize", c.triplet_normalize}};
}

}  // namespace

ModelMode parse_mode(std::string_view token) {
  if (token == "slice") return ModelMode::slice;
  if (token == "volume") return ModelMode::volume;
  throw std::invalid_argument("unknown mode '" + std::string(token) + "'; expected slice or volume");
}

std::string_view to_string(ModelMode mode) { return mode == ModelMode::slice ? "slice" : "volume"; }

void ExperimentConfig::validate() const {
  make_variant(arch);
  if (mode == ModelMode::slice && aggregator) throw std::invalid_argument("aggregator: slice mode takes none");
  if (mode == ModelMode::volume && !aggregator) throw std::invalid_argument("aggregator: volume mode requires one");
  loss.validate();
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (folds < 2) throw std::invalid_argument("folds must be at least 2");
  if (dataset.has_value() == phantoms.has_value()) {
    throw std::invalid_argument("exactly one of dataset and phantoms must be given");
  }
  if (phantoms) phantoms->validate();
  if (side == 0 || side % 16 != 0) throw std::invalid_argument("side must be a positive multiple of 16");
  augmentation.validate();
  if (name.empty()) throw std::invalid_argument("name must be non-empty");
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j, kKeys, "config");
  ExperimentConfig c;
  read(j, "name", c.name);
  read(j, "arch", c.arch);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  c.aggregator.reset();
  if (j.contains("aggregator") && !j.at("aggregator").is_null()) {
    c.aggregator = parse_aggregator(j.at("aggregator").get<std::string>());
  } else if (c.mode == ModelMode::volume) {
    c.aggregator = AggregatorKind::bilinear;
  }
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  c.fold_seed = c.seed;
  read(j, "fold_seed", c.fold_seed);
  read(j, "folds", c.folds);
  if (j.contains("dataset") && !j.at("dataset").is_null()) c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("phantoms") && !j.at("phantoms").is_null()) c.phantoms = phantom_config_from_json(j.at("phantoms"));
  read(j, "side", c.side);
  read(j, "tta", c.tta);
  c.augmentation = j.contains("augmentation") ? policy_from_json(j.at("augmentation"))
                                              : AugmentationPolicy::standard(c.seed);
  c.output_dir = "runs/" + c.name;
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  read(j, "save_checkpoints", c.save_checkpoints);
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["arch"] = c.arch;
  j["mode"] = to_string(c.mode);
  j["aggregator"] = c.aggregator ? json(to_string(*c.aggregator)) : json(nullptr);
  j["loss"] = loss_to_json(c.loss);
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["fold_seed"] = c.fold_seed;
  j["folds"] = c.folds;
  j["dataset"] = c.dataset ? json(c.dataset->string()) : json(nullptr);
  j["phantoms"] = c.phantoms ? to_json(*c.phantoms) : json(nullptr);
  j["side"] = c.side;
  j["tta"] = c.tta;
  j["augmentation"] = to_json(c.augmentation);
  j["output_dir"] = c.output_dir.string();
  j["save_checkpoints"] = c.save_checkpoints;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config");
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

json data_source_json(const ExperimentConfig& c) {
  return {{"dataset", c.dataset ? json(c.dataset->string()) : json(nullptr)},
          {"phantoms", c.phantoms ? to_json(*c.phantoms) : json(nullptr)},
          {"side", c.side}};
}

}  // namespace anivol
