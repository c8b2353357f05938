#include "doctest.h"

#include <cmath>

#include "pmil/graph.hpp"
#include "pmil/ops.hpp"
#include "pmil/rng.hpp"
#include "pmil/trainer.hpp"

using namespace pmil;

namespace {

// toy scale: l=2, d=16, heads=2, image 16x16, patch 8
ViTConfig toy_vit(int k = 1) {
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.channels = 3;
  cfg.embed_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.num_prompts = k;
  return cfg;
}

GenSpec toy_gen(int n, std::uint64_t seed = 5) {
  GenSpec g;
  g.image_size = 16;
  g.n_min = n;
  g.n_max = n;
  g.train_bags = 2;
  g.val_bags = 2;
  g.test_bags = 2;
  g.seed = seed;
  return g;
}

TrainConfig toy_train(int batch) {
  TrainConfig t;
  t.instance_batch = batch;
  t.epochs = 4;
  t.base_lr = 1e-3;
  t.weight_decay = 0.0;
  t.seed = 3;
  return t;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double x = a.value_at(i), y = b.value_at(i);
    const double rel = std::abs(x - y) / (std::abs(x) + std::abs(y) + 1e-300);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("step1 batching does not change feature values") {
  PromptVit model(toy_vit(), 11);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 11);
  Dataset ds = generate_dataset(toy_gen(8));
  const Bag& bag = ds.train[0];

  Trainer batched(model, head, toy_train(4), TrainMode::PromptMIL);
  Tensor h4 = batched.step1_features(bag);

  Trainer whole(model, head, toy_train(64), TrainMode::PromptMIL);
  Tensor h64 = whole.step1_features(bag);

  REQUIRE(h4.shape() == Shape{8, 16});
  for (std::int64_t i = 0; i < h4.numel(); ++i)
    CHECK(h4.value_at(i) == h64.value_at(i));
}

TEST_CASE("step1 handles a bag smaller than the batch") {
  PromptVit model(toy_vit(), 13);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 13);
  Dataset ds = generate_dataset(toy_gen(1));
  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Tensor h = trainer.step1_features(ds.train[0]);
  CHECK(h.shape() == Shape{1, 16});
}

TEST_CASE("step1 peak activation memory is independent of bag size") {
  PromptVit model(toy_vit(), 17);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 17);
  Trainer trainer(model, head, toy_train(8), TrainMode::PromptMIL);

  std::vector<std::int64_t> peaks;
  for (int n : {8, 32, 128}) {
    Dataset ds = generate_dataset(toy_gen(n));
    MemMeter meter;
    trainer.step1_features(ds.train[0], &meter);
    peaks.push_back(meter.peak_activation_elems());
  }
  CHECK(peaks[0] == peaks[1]);
  CHECK(peaks[1] == peaks[2]);
}

TEST_CASE("step2 gradient matches the closed form of a linear-mean model") {
  // MeanPool head, d=2, n=2, hand-set weights: logit = w . mean(h) + b
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  ViTConfig cfg = toy_vit();
  cfg.embed_dim = 2;
  cfg.num_heads = 1;
  PromptVit model(cfg, 19);
  MILHead head(HeadKind::MeanPool, 2, task, 19);
  for (NamedParam& p : head.params()) {
    if (p.name == "head.cls.w") {
      p.tensor.set_value_at(0, 0.7);
      p.tensor.set_value_at(1, -0.4);
    } else {
      p.tensor.set_value_at(0, 0.1);
    }
  }
  Tensor h = Tensor::from_vector({2, 2}, {0.5, -1.0, 1.5, 2.0});

  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Step2Result r = trainer.step2_head_update(h, 1, 0.0);
  CHECK(r.g.shape() == Shape{2, 2});

  // dL/dh_ij = (sigmoid(z) - y) * w_j / n
  const double z = 0.7 * (0.5 + 1.5) / 2 + (-0.4) * (-1.0 + 2.0) / 2 + 0.1;
  const double dz = 1.0 / (1.0 + std::exp(-z)) - 1.0;
  const double expect[2] = {dz * 0.7 / 2, dz * -0.4 / 2};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(r.g.at(i, j) == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("step2 with zero lr leaves the head unchanged but still retains g") {
  PromptVit model(toy_vit(), 23);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 23);
  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Dataset ds = generate_dataset(toy_gen(4));
  Tensor h = trainer.step1_features(ds.train[0]);

  std::vector<double> before;
  for (const NamedParam& p : head.params())
    for (double v : p.tensor.to_vector()) before.push_back(v);

  Step2Result r = trainer.step2_head_update(h, ds.train[0].label, 0.0);
  CHECK(r.g.shape() == Shape{4, 16});

  std::vector<double> after;
  for (const NamedParam& p : head.params())
    for (double v : p.tensor.to_vector()) after.push_back(v);
  CHECK(before == after);
}

TEST_CASE("step3 with zero retained gradient leaves the prompt unchanged") {
  PromptVit model(toy_vit(), 29);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 29);
  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Dataset ds = generate_dataset(toy_gen(8));

  std::vector<double> before = model.prompt_tokens().to_vector();
  Tensor zero_g = Tensor::zeros({8, 16});
  Tensor applied = trainer.step3_prompt_update(ds.train[0], zero_g, 1e-2);
  for (std::int64_t i = 0; i < applied.numel(); ++i) CHECK(applied.value_at(i) == 0.0);
  // zero gradient, zero moments: debiased adam step is exactly zero
  CHECK(model.prompt_tokens().to_vector() == before);
}

TEST_CASE("step3 rejects a mismatched retained gradient") {
  PromptVit model(toy_vit(), 31);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 31);
  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Dataset ds = generate_dataset(toy_gen(8));
  CHECK_THROWS_AS(trainer.step3_prompt_update(ds.train[0], Tensor::zeros({5, 16}), 0.0),
                  ShapeError);
}

TEST_CASE("three-step prompt gradient equals the full-graph gradient") {
  // the gradient-retaining equivalence at toy scale: n=8, m=2
  PromptVit model(toy_vit(1), 37);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 37);
  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Dataset ds = generate_dataset(toy_gen(8));

  StepOutcome three = trainer.train_on_bag_three_step(ds.train[0], 0.0);
  StepOutcome full = trainer.train_on_bag_full_graph(ds.train[0], 0.0);

  CHECK(three.loss == full.loss);
  CHECK(max_rel_diff(three.prompt_grad, full.prompt_grad) < 1e-10);
}

TEST_CASE("three-step equivalence also holds with a live head update") {
  // with lr_head > 0 the prescribed order is: head update, then prompt update
  // with the pre-update g; the full-graph step applies both updates from the
  // same pre-update gradients, so trajectories coincide
  Dataset ds = generate_dataset(toy_gen(6, 41));

  PromptVit model_a(toy_vit(1), 43);
  MILHead head_a(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 43);
  Trainer trainer_a(model_a, head_a, toy_train(2), TrainMode::PromptMIL);
  StepOutcome three = trainer_a.train_on_bag_three_step(ds.train[0], 1e-2);

  PromptVit model_b(toy_vit(1), 43);
  MILHead head_b(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 43);
  Trainer trainer_b(model_b, head_b, toy_train(2), TrainMode::PromptMIL);
  StepOutcome full = trainer_b.train_on_bag_full_graph(ds.train[0], 1e-2);

  CHECK(three.loss == full.loss);
  CHECK(max_rel_diff(three.prompt_grad, full.prompt_grad) < 1e-10);
  CHECK(max_rel_diff(model_a.prompt_tokens(), model_b.prompt_tokens()) < 1e-9);
  auto pa = head_a.params(), pb = head_b.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(max_rel_diff(pa[i].tensor, pb[i].tensor) < 1e-9);
}

TEST_CASE("accumulated prompt gradient is independent of the batch split") {
  Dataset ds = generate_dataset(toy_gen(8, 47));
  std::vector<Tensor> grads;
  for (int batch : {1, 2, 8}) {
    PromptVit model(toy_vit(1), 53);
    MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 53);
    Trainer trainer(model, head, toy_train(batch), TrainMode::PromptMIL);
    grads.push_back(trainer.train_on_bag_three_step(ds.train[0], 0.0).prompt_grad);
  }
  CHECK(max_rel_diff(grads[0], grads[1]) < 1e-12);
  CHECK(max_rel_diff(grads[0], grads[2]) < 1e-12);
  CHECK(max_rel_diff(grads[1], grads[2]) < 1e-12);
}

TEST_CASE("one epoch over one bag performs one head and one prompt update") {
  PromptVit model(toy_vit(1), 59);
  TaskSpec task{TaskKind::SubtypeBinary, 2};
  MILHead head(HeadKind::DSMIL, 16, task, 59);
  Trainer trainer(model, head, toy_train(4), TrainMode::PromptMIL);
  Dataset ds = generate_dataset(toy_gen(4));
  std::vector<Bag> one = {ds.train[0]};

  trainer.train_epoch(one, 0);
  CHECK(trainer.head_optimizer().step_count(head.params()[0].tensor) == 1);
  CHECK(trainer.extractor_optimizer().step_count(model.prompt_tokens()) == 1);
}

TEST_CASE("modes control which parameters move") {
  Dataset ds = generate_dataset(toy_gen(4, 61));
  std::vector<Bag> bags = {ds.train[0], ds.train[1]};

  SUBCASE("prompt mode: backbone frozen, prompt moves") {
    PromptVit model(toy_vit(1), 67);
    MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 67);
    Trainer trainer(model, head, toy_train(2), TrainMode::PromptMIL);
    const std::uint64_t checksum = model.backbone_checksum();
    const std::vector<double> prompt_before = model.prompt_tokens().to_vector();
    trainer.train_epoch(bags, 0);
    CHECK(model.backbone_checksum() == checksum);
    CHECK(model.prompt_tokens().to_vector() != prompt_before);
    ParamCensus census = count_trainable_params(model, head);
    CHECK(census.prompt == 16);
    CHECK_FALSE(census.backbone_trainable);
  }

  SUBCASE("conventional mode: only the head moves") {
    PromptVit model(toy_vit(0), 71);
    MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 71);
    Trainer trainer(model, head, toy_train(2), TrainMode::ConventionalMIL);
    const std::uint64_t checksum = model.backbone_checksum();
    trainer.train_epoch(bags, 0);
    CHECK(model.backbone_checksum() == checksum);
    CHECK(trainer.extractor_optimizer().step_count(model.prompt_tokens()) == 0);
    ParamCensus census = count_trainable_params(model, head);
    CHECK(census.prompt == 0);
  }

  SUBCASE("full fine-tune mode: backbone moves and census reflects it") {
    PromptVit model(toy_vit(1), 73);
    MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 73);
    Trainer trainer(model, head, toy_train(2), TrainMode::FullFineTune);
    const std::uint64_t checksum = model.backbone_checksum();
    trainer.train_epoch(bags, 0);
    CHECK(model.backbone_checksum() != checksum);
    ParamCensus census = count_trainable_params(model, head);
    CHECK(census.backbone_trainable);
    CHECK(census.backbone > 0);
  }
}

TEST_CASE("bench: three-step needs far less activation memory at n=64") {
  PromptVit model(toy_vit(1), 79);
  MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 79);
  TrainConfig tc = toy_train(8);
  Trainer trainer(model, head, tc, TrainMode::PromptMIL);

  Dataset ds = generate_dataset(toy_gen(64, 83));
  auto rows = bench_strategies(trainer, {ds.train[0]});
  REQUIRE(rows.size() == 2);
  const BenchRow& full = rows[0];
  const BenchRow& three = rows[1];
  REQUIRE(full.strategy == Strategy::FullGraph);
  REQUIRE(three.strategy == Strategy::ThreeStep);
  CHECK(full.loss == three.loss);
  const double reduction =
      1.0 - static_cast<double>(three.peak_act_elems) /
                static_cast<double>(full.peak_act_elems);
  CHECK(reduction >= 0.30);
}

TEST_CASE("bench: full-graph peak grows with n, three-step stays near flat") {
  PromptVit model(toy_vit(1), 89);
  MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 89);
  Trainer trainer(model, head, toy_train(8), TrainMode::PromptMIL);

  std::vector<std::int64_t> full_peaks, three_peaks;
  for (int n : {64, 128}) {
    Dataset ds = generate_dataset(toy_gen(n, 97));
    auto rows = bench_strategies(trainer, {ds.train[0]});
    full_peaks.push_back(rows[0].peak_act_elems);
    three_peaks.push_back(rows[1].peak_act_elems);
  }
  // full-graph roughly doubles; three-step growth comes only from the
  // O(n d) head graph
  CHECK(static_cast<double>(full_peaks[1]) > 1.8 * static_cast<double>(full_peaks[0]));
  CHECK(static_cast<double>(three_peaks[1]) < 1.3 * static_cast<double>(three_peaks[0]));
}

TEST_CASE("f32 precision runs keep f64 gradient accumulators") {
  TrainConfig tc = toy_train(4);
  tc.precision = DType::F32;
  PromptVit model(toy_vit(1), 101, DType::F32);
  MILHead head(HeadKind::DSMIL, 16, TaskSpec{TaskKind::SubtypeBinary, 2}, 101, DType::F32);
  Trainer trainer(model, head, tc, TrainMode::PromptMIL);
  Dataset ds = generate_dataset(toy_gen(8, 103));
  StepOutcome o = trainer.train_on_bag_three_step(ds.train[0], 1e-3);
  CHECK(o.prompt_grad.dtype() == DType::F64);
  CHECK(std::isfinite(o.loss));
}

}  // TEST_SUITE
