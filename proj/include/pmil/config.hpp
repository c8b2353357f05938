#pragma once

#include <string>

#include "pmil/mil.hpp"
#include "pmil/synth.hpp"
#include "pmil/trainer.hpp"
#include "pmil/vit.hpp"

namespace pmil {

// Full experiment description, serializable to a sectioned key-value file.
struct ExperimentConfig {
  TrainMode mode = TrainMode::PromptMIL;
  std::string out_dir = "runs/exp";
  std::string backbone_init = "pretrain-lite";  // or "random"
  int pretrain_steps = 300;
  int pretrain_batch = 8;
  double pretrain_lr = 1e-3;

  ViTConfig model;
  HeadKind head_kind = HeadKind::DSMIL;
  TaskSpec task;
  TrainConfig train;

  std::string data_path;  // when set, load this dataset instead of generating
  GenSpec data;

  bool operator==(const ExperimentConfig&) const = default;

  // Applies mode constraints: conventional MIL forces k = 0; prompt mode
  // requires k >= 1.
  void normalize_and_validate();
};

ExperimentConfig default_config();

// Sectioned key = value text. Unknown sections/keys and malformed values
// raise ConfigError with the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);
std::string to_ini(const ExperimentConfig& cfg);

const char* head_kind_name(HeadKind k);
const char* task_kind_name(TaskKind k);
const char* label_rule_name(LabelRule r);

}  // namespace pmil
