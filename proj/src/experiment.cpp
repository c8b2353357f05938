#include "pmil/experiment.hpp"

#include <chrono>
#include <cmath>

#include "pmil/bagio.hpp"
#include "pmil/errors.hpp"
#include "pmil/graph.hpp"
#include "pmil/ops.hpp"
#include "pmil/report.hpp"
#include "pmil/rng.hpp"

namespace pmil {

namespace {

// auxiliary texture families, distinct from the default downstream spec
struct AuxClass {
  double freq;
  double angle;
};
constexpr AuxClass kAuxClasses[4] = {
    {4.0, 0.0}, {4.0, 1.5707963267948966}, {8.0, 0.7853981633974483},
    {8.0, 2.356194490192345}};

Tensor aux_instance(int image_size, int channels, int cls, Rng& rng, DType dtype) {
  Tensor img = Tensor::zeros({image_size, image_size, channels}, dtype);
  std::normal_distribution<double> noise(0.0, 0.2);
  std::uniform_real_distribution<double> phase_dist(0.0, 6.283185307179586);
  const double phase = phase_dist(rng);
  const double ca = std::cos(kAuxClasses[cls].angle);
  const double sa = std::sin(kAuxClasses[cls].angle);
  std::int64_t idx = 0;
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const double t = (x * ca + y * sa) / static_cast<double>(image_size);
      const double v =
          0.5 + 0.5 * std::sin(6.283185307179586 * kAuxClasses[cls].freq * t + phase);
      for (int c = 0; c < channels; ++c)
        img.set_value_at(idx++, std::clamp(v + noise(rng), 0.0, 1.0));
    }
  }
  img.set_persistent(true);
  return img;
}

}  // namespace

void pretrain_lite(PromptVit& model, int steps, int batch, double lr,
                   std::uint64_t seed) {
  const ViTConfig& cfg = model.config();
  const DType dtype = model.dtype();
  Rng rng(derive_seed(seed, seed_tag::kPretrain));

  // temporary linear readout on the class token
  Tensor probe_w = randn({cfg.embed_dim, 4}, rng, 0.1, dtype);
  probe_w.set_persistent(true);
  probe_w.set_requires_grad(true);
  Tensor probe_b = Tensor::zeros({1, 4}, dtype);
  probe_b.set_persistent(true);
  probe_b.set_requires_grad(true);

  const bool was_trainable = model.backbone_trainable();
  model.set_backbone_trainable(true);
  Optimizer opt(OptimKind::Adam, 0.0);

  std::uniform_int_distribution<int> cls_dist(0, 3);
  for (int step = 0; step < steps; ++step) {
    Graph graph(GraphMode::Recording);
    GradMap grads;
    {
      GraphScope scope(graph);
      Tensor loss;
      for (int b = 0; b < batch; ++b) {
        const int cls = cls_dist(rng);
        Tensor patches = patchify(aux_instance(cfg.image_size, cfg.channels, cls, rng, dtype),
                                  cfg.patch_size);
        Tensor feat = model.forward_instance(patches);
        Tensor logits = linear(feat, probe_w, probe_b);
        // stable CE against the drawn class
        Tensor m = max_all(logits);
        Tensor lse = add(log(sum_all(exp(sub(logits, broadcast_to(m, logits.shape()))))), m);
        Tensor ce = sub(lse, slice_cols(logits, cls, 1));
        loss = b == 0 ? ce : add(loss, ce);
      }
      loss = scale(loss, 1.0 / static_cast<double>(batch));
      grads = graph.backward(loss);
    }
    std::vector<NamedParam> params = model.backbone_params();
    params.push_back({"pretrain.probe.w", probe_w});
    params.push_back({"pretrain.probe.b", probe_b});
    opt.step(params, grads, lr);
  }

  model.set_backbone_trainable(was_trainable);
}

PromptVit build_model(const ExperimentConfig& cfg) {
  PromptVit model(cfg.model, cfg.train.seed, cfg.train.precision);
  if (cfg.backbone_init == "pretrain-lite" && cfg.pretrain_steps > 0) {
    // run prompt-free so every k shares the same frozen backbone
    ViTConfig bare = cfg.model;
    bare.num_prompts = 0;
    PromptVit aux(bare, cfg.train.seed, cfg.train.precision);
    pretrain_lite(aux, cfg.pretrain_steps, cfg.pretrain_batch, cfg.pretrain_lr,
                  cfg.train.seed);
    std::vector<NamedParam> src = aux.backbone_params();
    std::vector<NamedParam> dst = model.backbone_params();
    for (std::size_t i = 0; i < src.size(); ++i)
      for (std::int64_t j = 0; j < src[i].tensor.numel(); ++j)
        dst[i].tensor.set_value_at(j, src[i].tensor.value_at(j));
  }
  return model;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, std::ostream* report,
                                Checkpoint* best_checkpoint) {
  ExperimentConfig cfg = cfg_in;
  cfg.normalize_and_validate();
  const std::string config_echo = to_ini(cfg);

  Dataset ds = cfg.data_path.empty() ? generate_dataset(cfg.data)
                                     : load_dataset(cfg.data_path);
  if (ds.train.empty() || ds.val.empty() || ds.test.empty())
    throw DataError("experiment: all three splits must be nonempty");

  PromptVit model = build_model(cfg);
  MILHead head(cfg.head_kind, cfg.model.embed_dim, cfg.task, cfg.train.seed,
               cfg.train.precision);
  Trainer trainer(model, head, cfg.train, cfg.mode);

  ExperimentResult result;
  result.census = count_trainable_params(model, head);
  result.data_fingerprint = dataset_fingerprint(ds);

  if (report) {
    append_record(*report, Json{{"record", "config"}, {"ini", config_echo}});
    append_record(*report, Json{{"record", "census"},
                                {"prompt_params", result.census.prompt},
                                {"head_params", result.census.head},
                                {"backbone_params", result.census.backbone},
                                {"backbone_trainable", result.census.backbone_trainable},
                                {"data_fingerprint", hex_u64(result.data_fingerprint)},
                                {"seed", cfg.train.seed}});
  }

  const std::uint64_t frozen_checksum = model.backbone_checksum();
  Checkpoint best;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats stats = trainer.train_epoch(ds.train, epoch);
    const auto t1 = std::chrono::steady_clock::now();
    const double secs_per_bag =
        std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(stats.bags);

    Trainer::EvalResult val = trainer.evaluate(ds.val);
    if (report) {
      append_record(*report, Json{{"record", "epoch"},
                                  {"epoch", epoch},
                                  {"split", "train"},
                                  {"loss", stats.mean_loss},
                                  {"accuracy", nullptr},
                                  {"auroc", nullptr},
                                  {"strategy", "three_step"},
                                  {"secs_per_bag", secs_per_bag}});
      append_record(*report, Json{{"record", "epoch"},
                                  {"epoch", epoch},
                                  {"split", "val"},
                                  {"loss", val.loss},
                                  {"accuracy", val.acc},
                                  {"auroc", val.auc},
                                  {"strategy", "three_step"},
                                  {"secs_per_bag", secs_per_bag}});
    }
    if (val.acc > result.best_val_accuracy || result.best_epoch < 0) {
      result.best_val_accuracy = val.acc;
      result.best_epoch = epoch;
      best = snapshot_params(config_echo, model, head);
    }
  }

  if (cfg.mode != TrainMode::FullFineTune &&
      model.backbone_checksum() != frozen_checksum)
    throw NumericError("experiment: frozen backbone drifted during training");

  // final test metrics come from the best-validation snapshot
  restore_params(best, model, head);
  Trainer::EvalResult test = trainer.evaluate(ds.test);
  result.test_loss = test.loss;
  result.test_accuracy = test.acc;
  result.test_auroc = test.auc;

  if (report)
    append_record(*report, Json{{"record", "result"},
                                {"split", "test"},
                                {"loss", test.loss},
                                {"accuracy", test.acc},
                                {"auroc", test.auc},
                                {"best_epoch", result.best_epoch},
                                {"best_val_accuracy", result.best_val_accuracy}});
  if (best_checkpoint) *best_checkpoint = std::move(best);
  return result;
}

}  // namespace pmil
