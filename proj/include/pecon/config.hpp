#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "pecon/datamodel.hpp"
#include "pecon/evaluation.hpp"
#include "pecon/training.hpp"

namespace pecon {

struct EvalConfig {
  double lambda = 0.375;
  std::vector<double> lambda_grid = default_lambda_grid();
  bool include_subsegmental = true;
  double threshold = 0.5;
};

// One JSON document drives every command. Sections: data, pretrain,
// finetune_visual, finetune_ehr, eval. Every key is optional and defaults
// to the stage presets; unknown keys are errors so hyperparameter typos
// cannot pass silently. The PECON_SEED environment variable overrides all
// seeds in the document.
struct RunConfig {
  std::filesystem::path out_dir = "pecon_out";
  std::optional<std::filesystem::path> manifest;
  SyntheticConfig synthetic;
  TrainConfig pretrain = default_config(Stage::pretrain);
  TrainConfig finetune_visual = default_config(Stage::finetune_visual);
  TrainConfig finetune_ehr = default_config(Stage::finetune_ehr);
  EvalConfig eval;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text);

}  // namespace pecon
