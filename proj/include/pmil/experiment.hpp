#pragma once

#include <ostream>
#include <string>

#include "pmil/checkpoint.hpp"
#include "pmil/config.hpp"
#include "pmil/trainer.hpp"

namespace pmil {

// Briefly trains the backbone on an auxiliary patch-level texture task
// (frequency/orientation classes disjoint from any downstream GenSpec), then
// freezes it. Runs prompt-free so the initialization is identical for every
// k; deterministic in `seed`.
void pretrain_lite(PromptVit& model, int steps, int batch, double lr,
                   std::uint64_t seed);

// Builds the model per config (random init or pretrain-lite).
PromptVit build_model(const ExperimentConfig& cfg);

struct ExperimentResult {
  double test_loss = 0;
  double test_accuracy = 0;
  double test_auroc = 0;
  double best_val_accuracy = 0;
  int best_epoch = -1;
  ParamCensus census;
  std::uint64_t data_fingerprint = 0;
};

// Full training pipeline: dataset (loaded or generated), model + head +
// trainer per mode, per-epoch val tracking with a best-validation parameter
// snapshot, final test evaluation on the best snapshot. Report records go to
// `report` when non-null; checkpoint lands in cfg.out_dir via the caller.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* report,
                                Checkpoint* best_checkpoint = nullptr);

}  // namespace pmil
