#include "pmil/trainer.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "pmil/errors.hpp"
#include "pmil/graph.hpp"
#include "pmil/ops.hpp"
#include "pmil/rng.hpp"

namespace pmil {

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::PromptMIL: return "prompt";
    case TrainMode::ConventionalMIL: return "conventional";
    case TrainMode::FullFineTune: return "full";
  }
  return "?";
}

const char* strategy_name(Strategy s) {
  return s == Strategy::ThreeStep ? "three_step" : "full_graph";
}

void TrainConfig::validate() const {
  if (instance_batch < 1) throw ConfigError("train: instance_batch must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (base_lr <= 0) throw ConfigError("train: base_lr must be positive");
  if (weight_decay < 0) throw ConfigError("train: negative weight_decay");
  if (eta_min < 0) throw ConfigError("train: negative eta_min");
}

Trainer::Trainer(PromptVit& model, MILHead& head, const TrainConfig& cfg, TrainMode mode)
    : model_(model),
      head_(head),
      cfg_(cfg),
      mode_(mode),
      head_opt_(cfg.optimizer, cfg.weight_decay),
      extractor_opt_(cfg.optimizer, cfg.weight_decay) {
  cfg_.validate();
  model_.set_backbone_trainable(mode_ == TrainMode::FullFineTune);
}

std::vector<Tensor> Trainer::bag_patches(const Bag& bag) const {
  if (bag.n == 0) throw ShapeError("trainer: empty bag");
  return bag.instance_patches(model_.config().patch_size, cfg_.precision);
}

Tensor Trainer::forward_batch(const std::vector<Tensor>& patches, std::size_t start,
                              std::size_t count) const {
  std::vector<Tensor> slice(patches.begin() + static_cast<std::ptrdiff_t>(start),
                            patches.begin() + static_cast<std::ptrdiff_t>(start + count));
  return model_.forward_features(slice);
}

Tensor Trainer::step1_features(const Bag& bag, MemMeter* meter) const {
  std::vector<Tensor> patches = bag_patches(bag);
  Graph graph(GraphMode::Inference, meter);
  GraphScope scope(graph);

  const std::size_t n = patches.size();
  const std::size_t batch = static_cast<std::size_t>(cfg_.instance_batch);
  std::vector<Tensor> parts;
  for (std::size_t b0 = 0; b0 < n; b0 += batch)
    parts.push_back(forward_batch(patches, b0, std::min(batch, n - b0)));
  Tensor h = parts.size() == 1 ? parts[0] : concat_rows(parts);
  return h.detached();
}

Step2Result Trainer::step2_head_update(const Tensor& h_in, int label, double lr,
                                       MemMeter* meter) {
  Tensor h = h_in.detached();
  h.set_requires_grad(true);

  Graph graph(GraphMode::Recording, meter);
  GradMap grads;
  Step2Result out;
  {
    GraphScope scope(graph);
    out.pred = head_.aggregate(h);
    Tensor loss = mil_loss(out.pred, label, head_.task());
    out.loss = loss.scalar();
    if (!std::isfinite(out.loss))
      throw NumericError("trainer: non-finite loss in head update");
    grads = graph.backward(loss);
  }
  out.g = grads.grad(h);  // retained before the update below

  std::vector<NamedParam> hp = head_.params();
  head_opt_.step(hp, grads, lr);
  return out;
}

Tensor Trainer::step3_prompt_update(const Bag& bag, const Tensor& g, double lr,
                                    MemMeter* meter) {
  const int d = model_.config().embed_dim;
  if (g.rows() != bag.n || g.cols() != d)
    throw ShapeError("step3: retained gradient " + shape_str(g.shape()) +
                     " does not match bag with n = " + std::to_string(bag.n) +
                     ", d = " + std::to_string(d));

  std::vector<NamedParam> trainables = model_.trainable_params();
  const Tensor& prompt = model_.prompt_tokens();
  if (trainables.empty()) return Tensor::zeros(prompt.shape(), DType::F64);

  std::vector<Tensor> patches = bag_patches(bag);
  const std::size_t n = patches.size();
  const std::size_t batch = static_cast<std::size_t>(cfg_.instance_batch);

  // f64 accumulators regardless of run precision
  std::map<std::uint64_t, Tensor> acc;
  for (const NamedParam& p : trainables)
    acc.emplace(p.tensor.buffer_id(), Tensor::zeros(p.tensor.shape(), DType::F64));

  for (std::size_t b0 = 0; b0 < n; b0 += batch) {
    const std::size_t count = std::min(batch, n - b0);
    Graph graph(GraphMode::Recording, meter);
    Tensor h_b;
    {
      GraphScope scope(graph);
      h_b = forward_batch(patches, b0, count);
    }
    Tensor seed = Tensor::zeros({static_cast<std::int64_t>(count), d}, cfg_.precision);
    for (std::size_t i = 0; i < count; ++i)
      for (int j = 0; j < d; ++j)
        seed.set_value_at(static_cast<std::int64_t>(i) * d + j,
                          g.at(static_cast<std::int64_t>(b0 + i), j));
    GradMap grads = graph.backward_with_seed(h_b, seed);
    for (const NamedParam& p : trainables) {
      Tensor dp = grads.grad(p.tensor);
      Tensor& a = acc.at(p.tensor.buffer_id());
      for (std::int64_t i = 0; i < a.numel(); ++i)
        a.set_value_at(i, a.value_at(i) + dp.value_at(i));
    }
  }

  for (NamedParam& p : trainables)
    extractor_opt_.step_one(p.name, p.tensor, acc.at(p.tensor.buffer_id()), lr);

  auto it = acc.find(prompt.buffer_id());
  return it != acc.end() ? it->second : Tensor::zeros(prompt.shape(), DType::F64);
}

StepOutcome Trainer::train_on_bag_three_step(const Bag& bag, double lr, MemMeter* meter) {
  Tensor h = step1_features(bag, meter);
  Step2Result s2 = step2_head_update(h, bag.label, lr, meter);
  StepOutcome out;
  out.loss = s2.loss;
  out.pred = s2.pred;
  out.prompt_grad = step3_prompt_update(bag, s2.g, lr, meter);
  return out;
}

StepOutcome Trainer::train_on_bag_full_graph(const Bag& bag, double lr, MemMeter* meter) {
  std::vector<Tensor> patches = bag_patches(bag);

  Graph graph(GraphMode::Recording, meter);
  GradMap grads;
  StepOutcome out;
  {
    GraphScope scope(graph);
    Tensor h = model_.forward_features(patches);
    out.pred = head_.aggregate(h);
    Tensor loss = mil_loss(out.pred, bag.label, head_.task());
    out.loss = loss.scalar();
    if (!std::isfinite(out.loss))
      throw NumericError("trainer: non-finite loss in full-graph step");
    grads = graph.backward(loss);
  }

  out.prompt_grad = grads.grad(model_.prompt_tokens()).astype(DType::F64);

  std::vector<NamedParam> hp = head_.params();
  head_opt_.step(hp, grads, lr);
  std::vector<NamedParam> tp = model_.trainable_params();
  for (NamedParam& p : tp)
    extractor_opt_.step_one(p.name, p.tensor, grads.grad(p.tensor), lr);
  return out;
}

EpochStats Trainer::train_epoch(const std::vector<Bag>& bags, int epoch, MemMeter* meter) {
  if (bags.empty()) throw DataError("train_epoch: empty dataset");
  const double lr = lr_at_epoch(epoch);

  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg_.seed,
                              derive_seed(seed_tag::kShuffle,
                                          static_cast<std::uint64_t>(epoch))));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

#ifndef NDEBUG
  const std::uint64_t checksum_before = model_.backbone_checksum();
#endif

  EpochStats stats;
  for (std::size_t idx : order) {
    StepOutcome o = train_on_bag_three_step(bags[idx], lr, meter);
    stats.mean_loss += o.loss;
    stats.bags += 1;
  }
  stats.mean_loss /= static_cast<double>(stats.bags);

#ifndef NDEBUG
  if (mode_ != TrainMode::FullFineTune)
    assert(model_.backbone_checksum() == checksum_before && "frozen backbone drifted");
#endif
  return stats;
}

Trainer::EvalResult Trainer::evaluate(const std::vector<Bag>& bags) const {
  if (bags.empty()) throw DataError("evaluate: empty split");
  std::vector<Prediction> preds;
  std::vector<int> labels;
  double loss_sum = 0;
  for (const Bag& bag : bags) {
    Tensor h = step1_features(bag);
    Prediction p = head_.aggregate(h);
    loss_sum += mil_loss(p, bag.label, head_.task()).scalar();
    preds.push_back(std::move(p));
    labels.push_back(bag.label);
  }
  EvalResult r;
  r.loss = loss_sum / static_cast<double>(bags.size());
  r.acc = accuracy(preds, labels, head_.task());
  r.auc = auroc(preds, labels, head_.task());
  return r;
}

std::vector<BenchRow> bench_strategies(Trainer& trainer, const std::vector<Bag>& bags) {
  std::vector<BenchRow> rows;
  for (const Bag& bag : bags) {
    for (Strategy s : {Strategy::FullGraph, Strategy::ThreeStep}) {
      MemMeter meter;
      const auto t0 = std::chrono::steady_clock::now();
      StepOutcome o = s == Strategy::FullGraph
                          ? trainer.train_on_bag_full_graph(bag, 0.0, &meter)
                          : trainer.train_on_bag_three_step(bag, 0.0, &meter);
      const auto t1 = std::chrono::steady_clock::now();
      BenchRow row;
      row.strategy = s;
      row.n_instances = bag.n;
      row.peak_act_elems = meter.peak_activation_elems();
      row.secs_per_bag = std::chrono::duration<double>(t1 - t0).count();
      row.loss = o.loss;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace pmil
