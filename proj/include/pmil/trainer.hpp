#pragma once

#include <cstdint>
#include <vector>

#include "pmil/mil.hpp"
#include "pmil/optim.hpp"
#include "pmil/synth.hpp"
#include "pmil/vit.hpp"

namespace pmil {

enum class TrainMode { PromptMIL, ConventionalMIL, FullFineTune };
enum class Strategy { ThreeStep, FullGraph };

const char* train_mode_name(TrainMode m);
const char* strategy_name(Strategy s);

struct TrainConfig {
  int instance_batch = 8;
  int epochs = 10;
  OptimKind optimizer = OptimKind::AdamW;
  double base_lr = 1e-3;
  double weight_decay = 1e-2;
  double eta_min = 0.0;
  int t_max = 0;  // 0: use epochs
  std::uint64_t seed = 1;
  DType precision = DType::F64;

  void validate() const;
  CosineSchedule schedule() const {
    return {base_lr, eta_min, t_max > 0 ? t_max : epochs};
  }

  bool operator==(const TrainConfig&) const = default;
};

struct Step2Result {
  Tensor g;  // [n, d] = dL/dh, captured before the head update
  double loss = 0;
  Prediction pred;
};

struct StepOutcome {
  double loss = 0;
  Tensor prompt_grad;  // f64, accumulated dL/dP; zero-row tensor when k = 0
  Prediction pred;
};

struct EpochStats {
  double mean_loss = 0;
  int bags = 0;
};

struct BenchRow {
  Strategy strategy = Strategy::ThreeStep;
  int n_instances = 0;
  std::int64_t peak_act_elems = 0;
  double secs_per_bag = 0;
  double loss = 0;
};

// Memory-bounded training: step 1 runs the frozen extractor batch-by-batch
// with no graph, step 2 updates the head and retains g = dL/dh, step 3
// recomputes each batch under a recording graph seeded with the matching
// rows of g and pushes the accumulated gradient into the prompt (and the
// backbone when fine-tuning).
class Trainer {
 public:
  Trainer(PromptVit& model, MILHead& head, const TrainConfig& cfg, TrainMode mode);

  const TrainConfig& config() const { return cfg_; }
  TrainMode mode() const { return mode_; }
  double lr_at_epoch(int epoch) const { return cosine_lr(epoch, cfg_.schedule()); }

  Tensor step1_features(const Bag& bag, MemMeter* meter = nullptr) const;
  Step2Result step2_head_update(const Tensor& h, int label, double lr,
                                MemMeter* meter = nullptr);
  Tensor step3_prompt_update(const Bag& bag, const Tensor& g, double lr,
                             MemMeter* meter = nullptr);

  StepOutcome train_on_bag_three_step(const Bag& bag, double lr,
                                      MemMeter* meter = nullptr);
  // End-to-end recording over all instances at once; the oracle and
  // benchmark comparator for the three-step path.
  StepOutcome train_on_bag_full_graph(const Bag& bag, double lr,
                                      MemMeter* meter = nullptr);

  EpochStats train_epoch(const std::vector<Bag>& bags, int epoch,
                         MemMeter* meter = nullptr);

  struct EvalResult {
    double loss = 0;
    double acc = 0;
    double auc = 0;
  };
  EvalResult evaluate(const std::vector<Bag>& bags) const;

  const Optimizer& head_optimizer() const { return head_opt_; }
  const Optimizer& extractor_optimizer() const { return extractor_opt_; }

 private:
  std::vector<Tensor> bag_patches(const Bag& bag) const;
  Tensor forward_batch(const std::vector<Tensor>& patches, std::size_t start,
                       std::size_t count) const;

  PromptVit& model_;
  MILHead& head_;
  TrainConfig cfg_;
  TrainMode mode_;
  Optimizer head_opt_;
  Optimizer extractor_opt_;
};

// One lr=0 training iteration per (bag, strategy) with peak activation and
// wall-clock instrumentation.
std::vector<BenchRow> bench_strategies(Trainer& trainer, const std::vector<Bag>& bags);

}  // namespace pmil
