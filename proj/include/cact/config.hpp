#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cact/context_net.hpp"
#include "cact/errors.hpp"
#include "cact/synthetic.hpp"
#include "cact/train.hpp"

namespace cact {

// One flat configuration drives every pipeline verb. Every field has a
// default; unknown keys are rejected by name.
struct RunConfig {
  std::string dataset_dir = "data/synthetic";
  std::string out_dir = "runs";

  std::size_t image_size = 448;
  std::size_t patch_size = 56;
  std::size_t count_per_class = 25;
  std::size_t patch_cap = 150;

  std::string extractor_family = "reference5";
  std::size_t feature_depth = 16;
  std::string pooling = "avg";
  std::string block_kind = "B2";
  std::string strategy = "standard";
  double alpha_joint = 0.5;
  double alpha_roi = 0.10;

  std::size_t window_cells = 8;
  std::size_t stride_cells = 1;

  double learning_rate = 1e-4;
  double rho = 0.9;
  double epsilon = 1e-8;
  std::size_t epochs = 10;
  bool finetune_extractor = true;
  bool freeze_extractor_bn = false;

  std::size_t pretrain_epochs = 10;
  std::size_t pretrain_batch = 16;
  double pretrain_learning_rate = 1e-3;

  int folds = 0;  // 0 trains on the manifest split; >= 2 runs cross-validation
  std::size_t workers = 1;
  std::uint64_t seed = 7;
};

inline std::string run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset_dir"] = c.dataset_dir;
  j["out_dir"] = c.out_dir;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["count_per_class"] = c.count_per_class;
  j["patch_cap"] = c.patch_cap;
  j["extractor_family"] = c.extractor_family;
  j["feature_depth"] = c.feature_depth;
  j["pooling"] = c.pooling;
  j["block_kind"] = c.block_kind;
  j["strategy"] = c.strategy;
  j["alpha_joint"] = c.alpha_joint;
  j["alpha_roi"] = c.alpha_roi;
  j["window_cells"] = c.window_cells;
  j["stride_cells"] = c.stride_cells;
  j["learning_rate"] = c.learning_rate;
  j["rho"] = c.rho;
  j["epsilon"] = c.epsilon;
  j["epochs"] = c.epochs;
  j["finetune_extractor"] = c.finetune_extractor;
  j["freeze_extractor_bn"] = c.freeze_extractor_bn;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["pretrain_batch"] = c.pretrain_batch;
  j["pretrain_learning_rate"] = c.pretrain_learning_rate;
  j["folds"] = c.folds;
  j["workers"] = c.workers;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

inline void validate_run_config(const RunConfig& c) {
  extractor_family_from(c.extractor_family);
  pooling_from(c.pooling);
  block_kind_from(c.block_kind);
  strategy_kind_from(c.strategy);
  if (c.alpha_joint < 0.0 || c.alpha_joint > 1.0)
    throw ConfigError("alpha_joint must be in [0, 1]", "alpha_joint");
  if (c.alpha_roi <= 0.0 || c.alpha_roi > 1.0)
    throw ConfigError("alpha_roi must be in (0, 1]", "alpha_roi");
  if (c.patch_size < 1) throw ConfigError("patch_size must be >= 1", "patch_size");
  if (c.window_cells < 1) throw ConfigError("window_cells must be >= 1", "window_cells");
  if (c.stride_cells < 1) throw ConfigError("stride_cells must be >= 1", "stride_cells");
  if (c.folds == 1 || c.folds < 0)
    throw ConfigError("folds must be 0 (manifest split) or >= 2", "folds");
}

inline RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "dataset_dir") c.dataset_dir = value.get<std::string>();
      else if (key == "out_dir") c.out_dir = value.get<std::string>();
      else if (key == "image_size") c.image_size = value.get<std::size_t>();
      else if (key == "patch_size") c.patch_size = value.get<std::size_t>();
      else if (key == "count_per_class") c.count_per_class = value.get<std::size_t>();
      else if (key == "patch_cap") c.patch_cap = value.get<std::size_t>();
      else if (key == "extractor_family") c.extractor_family = value.get<std::string>();
      else if (key == "feature_depth") c.feature_depth = value.get<std::size_t>();
      else if (key == "pooling") c.pooling = value.get<std::string>();
      else if (key == "block_kind") c.block_kind = value.get<std::string>();
      else if (key == "strategy") c.strategy = value.get<std::string>();
      else if (key == "alpha_joint") c.alpha_joint = value.get<double>();
      else if (key == "alpha_roi") c.alpha_roi = value.get<double>();
      else if (key == "window_cells") c.window_cells = value.get<std::size_t>();
      else if (key == "stride_cells") c.stride_cells = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "rho") c.rho = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "finetune_extractor") c.finetune_extractor = value.get<bool>();
      else if (key == "freeze_extractor_bn") c.freeze_extractor_bn = value.get<bool>();
      else if (key == "pretrain_epochs") c.pretrain_epochs = value.get<std::size_t>();
      else if (key == "pretrain_batch") c.pretrain_batch = value.get<std::size_t>();
      else if (key == "pretrain_learning_rate")
        c.pretrain_learning_rate = value.get<double>();
      else if (key == "folds") c.folds = value.get<int>();
      else if (key == "workers") c.workers = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("unknown config key: " + key, key);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what(), key);
    }
  }
  validate_run_config(c);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

inline SyntheticSpec synthetic_spec_from(const RunConfig& c) {
  SyntheticSpec s;
  s.image_size = c.image_size;
  s.patch_size = c.patch_size;
  s.seed = c.seed;
  return s;
}

inline Strategy config_strategy(const RunConfig& c) {
  Strategy s;
  s.kind = strategy_kind_from(c.strategy);
  s.alpha_joint = c.alpha_joint;
  s.alpha_roi = c.alpha_roi;
  return s;
}

inline ModelSpec config_model_spec(const RunConfig& c) {
  ModelSpec m;
  m.extractor.family = extractor_family_from(c.extractor_family);
  m.extractor.feature_depth = c.feature_depth;
  m.extractor.patch_size = c.patch_size;
  m.pooling = pooling_from(c.pooling);
  m.context.block = block_kind_from(c.block_kind);
  return apply_strategy(m, config_strategy(c));
}

inline TrainConfig config_train(const RunConfig& c) {
  TrainConfig t;
  t.strategy = config_strategy(c);
  t.epochs = c.epochs;
  t.optim = {c.learning_rate, c.rho, c.epsilon};
  t.finetune_extractor = c.finetune_extractor;
  t.freeze_extractor_bn = c.freeze_extractor_bn;
  t.seed = c.seed;
  return t;
}

inline PretrainConfig config_pretrain(const RunConfig& c) {
  PretrainConfig p;
  p.epochs = c.pretrain_epochs;
  p.batch = c.pretrain_batch;
  p.optim = {c.pretrain_learning_rate, c.rho, c.epsilon};
  p.pooling = pooling_from(c.pooling);
  p.seed = c.seed;
  return p;
}

}  // namespace cact
