#include "pmil/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmil/errors.hpp"
#include "pmil/ops.hpp"
#include "pmil/rng.hpp"

namespace pmil {

void TaskSpec::validate() const {
  if (kind == TaskKind::SubtypeBinary && num_classes != 2)
    throw ConfigError("task: subtype-binary requires num_classes = 2");
  if (num_classes < 2) throw ConfigError("task: num_classes must be >= 2");
}

namespace {

Tensor xavier(const Shape& shape, Rng& rng, DType dt) {
  const double std = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
  Tensor t = randn(shape, rng, std, dt);
  t.set_persistent(true);
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(const Shape& shape, DType dt) {
  Tensor t = Tensor::zeros(shape, dt);
  t.set_persistent(true);
  t.set_requires_grad(true);
  return t;
}

int gate_dim(int d) { return std::max(4, d / 2); }

std::vector<double> softmax_values(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

}  // namespace

MILHead::MILHead(HeadKind kind, int in_dim, const TaskSpec& task, std::uint64_t seed,
                 DType dtype)
    : kind_(kind), in_dim_(in_dim), task_(task), dtype_(dtype) {
  task_.validate();
  Rng rng(derive_seed(seed, seed_tag::kHead));
  const int C = task_.logits_dim();
  const int d = in_dim_;
  switch (kind_) {
    case HeadKind::DSMIL:
      inst_w_ = xavier({d, C}, rng, dtype_);
      inst_b_ = zeros_param({1, C}, dtype_);
      query_w_ = xavier({d, d}, rng, dtype_);
      query_b_ = zeros_param({1, d}, dtype_);
      value_w_ = xavier({d, d}, rng, dtype_);
      value_b_ = zeros_param({1, d}, dtype_);
      bag_w_ = xavier({d, C}, rng, dtype_);
      bag_b_ = zeros_param({1, C}, dtype_);
      break;
    case HeadKind::GatedAttention: {
      const int a = gate_dim(d);
      gate_v_ = xavier({d, a}, rng, dtype_);
      gate_u_ = xavier({d, a}, rng, dtype_);
      gate_w_ = xavier({a, 1}, rng, dtype_);
      cls_w_ = xavier({d, C}, rng, dtype_);
      cls_b_ = zeros_param({1, C}, dtype_);
      break;
    }
    case HeadKind::MeanPool:
      cls_w_ = xavier({d, C}, rng, dtype_);
      cls_b_ = zeros_param({1, C}, dtype_);
      break;
  }
}

Prediction MILHead::aggregate(const Tensor& h) const {
  if (h.rank() != 2 || h.rows() < 1)
    throw ShapeError("aggregate: empty bag or bad feature matrix " +
                     shape_str(h.shape()));
  if (h.cols() != in_dim_)
    throw ShapeError("aggregate: feature dim " + std::to_string(h.cols()) +
                     " does not match head dim " + std::to_string(in_dim_));
  const std::int64_t n = h.rows();
  Prediction pred;

  switch (kind_) {
    case HeadKind::DSMIL: {
      Tensor s = linear(h, inst_w_, inst_b_);  // [n, C]
      // critical instance: top max-class score (data-side index selection)
      std::int64_t crit = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < s.cols(); ++c) {
          if (s.at(i, c) > best) {
            best = s.at(i, c);
            crit = i;
          }
        }
      }
      Tensor s_crit = slice_rows(s, crit, 1);
      Tensor q = linear(h, query_w_, query_b_);  // [n, d]
      Tensor v = linear(h, value_w_, value_b_);  // [n, d]
      Tensor q_crit = slice_rows(q, crit, 1);
      Tensor sim = scale(matmul(q, transpose(q_crit)),
                         1.0 / std::sqrt(static_cast<double>(in_dim_)));  // [n, 1]
      Tensor attn = softmax(transpose(sim));  // [1, n]
      Tensor bag_value = matmul(attn, v);     // [1, d]
      Tensor s_bag = linear(bag_value, bag_w_, bag_b_);
      pred.logits = scale(add(s_crit, s_bag), 0.5);
      pred.critical_index = static_cast<int>(crit);
      pred.attention = attn.to_vector();
      break;
    }
    case HeadKind::GatedAttention: {
      Tensor t = tanh(matmul(h, gate_v_));
      Tensor u = sigmoid(matmul(h, gate_u_));
      Tensor e = matmul(mul(t, u), gate_w_);  // [n, 1]
      Tensor attn = softmax(transpose(e));    // [1, n]
      Tensor bag = matmul(attn, h);
      pred.logits = linear(bag, cls_w_, cls_b_);
      pred.attention = attn.to_vector();
      break;
    }
    case HeadKind::MeanPool: {
      Tensor bag = mean_rows(h);
      pred.logits = linear(bag, cls_w_, cls_b_);
      pred.attention = std::vector<double>(static_cast<std::size_t>(n),
                                           1.0 / static_cast<double>(n));
      break;
    }
  }

  if (task_.loss_kind() == LossKind::BCE) {
    const double p = 1.0 / (1.0 + std::exp(-pred.logits.value_at(0)));
    pred.probs = {1.0 - p, p};
  } else {
    pred.probs = softmax_values(pred.logits.to_vector());
  }
  return pred;
}

std::vector<NamedParam> MILHead::params() const {
  switch (kind_) {
    case HeadKind::DSMIL:
      return {{"head.inst.w", inst_w_}, {"head.inst.b", inst_b_},
              {"head.query.w", query_w_}, {"head.query.b", query_b_},
              {"head.value.w", value_w_}, {"head.value.b", value_b_},
              {"head.bag.w", bag_w_},     {"head.bag.b", bag_b_}};
    case HeadKind::GatedAttention:
      return {{"head.gate.v", gate_v_}, {"head.gate.u", gate_u_},
              {"head.gate.w", gate_w_}, {"head.cls.w", cls_w_},
              {"head.cls.b", cls_b_}};
    case HeadKind::MeanPool:
      return {{"head.cls.w", cls_w_}, {"head.cls.b", cls_b_}};
  }
  return {};
}

std::int64_t MILHead::param_count() const {
  std::int64_t c = 0;
  for (const NamedParam& p : params()) c += p.tensor.numel();
  return c;
}

Tensor mil_loss(const Prediction& pred, int label, const TaskSpec& task) {
  if (task.loss_kind() == LossKind::BCE) {
    if (label != 0 && label != 1)
      throw std::out_of_range("loss: binary label must be 0 or 1, got " +
                              std::to_string(label));
    return bce_with_logit(pred.logits, static_cast<double>(label));
  }
  if (label < 0 || label >= task.num_classes)
    throw std::out_of_range("loss: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(task.num_classes) + ")");
  // stable log-sum-exp: m + log sum exp(z - m) - z_y
  const Tensor& z = pred.logits;
  Tensor m = max_all(z);
  Tensor shifted = sub(z, broadcast_to(m, z.shape()));
  Tensor lse = add(log(sum_all(exp(shifted))), m);
  return sub(lse, slice_cols(z, label, 1));
}

int predicted_class(const Prediction& pred, const TaskSpec& task) {
  if (task.loss_kind() == LossKind::BCE)
    return pred.logits.value_at(0) > 0.0 ? 1 : 0;
  return static_cast<int>(std::max_element(pred.probs.begin(), pred.probs.end()) -
                          pred.probs.begin());
}

double accuracy(const std::vector<Prediction>& preds, const std::vector<int>& labels,
                const TaskSpec& task) {
  if (preds.empty()) throw std::invalid_argument("accuracy: empty prediction list");
  if (preds.size() != labels.size())
    throw std::invalid_argument("accuracy: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(labels.size()) +
                                " labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (predicted_class(preds[i], task) == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double auroc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: score/label length mismatch");
  std::int64_t pos = 0, neg = 0;
  for (int y : labels) (y > 0 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw AurocUndefinedError("auroc: needs at least one positive and one negative");

  // midranks; ties within a group share the average rank
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double rank_sum_pos = 0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] > 0) rank_sum_pos += rank[k];
  const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) *
                                      (static_cast<double>(pos) + 1.0);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auroc_macro_ovr(const std::vector<std::vector<double>>& class_scores,
                       const std::vector<int>& labels, int num_classes) {
  if (class_scores.size() != labels.size())
    throw std::invalid_argument("auroc: score/label length mismatch");
  double total = 0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t present = 0;
    for (int y : labels) present += (y == c);
    if (present == 0 || present == static_cast<std::int64_t>(labels.size())) continue;
    std::vector<double> s(labels.size());
    std::vector<int> bin(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = class_scores[i][static_cast<std::size_t>(c)];
      bin[i] = labels[i] == c ? 1 : 0;
    }
    total += auroc_binary(s, bin);
    ++used;
  }
  if (used == 0)
    throw AurocUndefinedError("auroc: all labels belong to a single class");
  return total / static_cast<double>(used);
}

double auroc(const std::vector<Prediction>& preds, const std::vector<int>& labels,
             const TaskSpec& task) {
  if (preds.empty()) throw std::invalid_argument("auroc: empty prediction list");
  if (task.loss_kind() == LossKind::BCE) {
    std::vector<double> scores(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) scores[i] = preds[i].probs[1];
    return auroc_binary(scores, labels);
  }
  std::vector<std::vector<double>> scores(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) scores[i] = preds[i].probs;
  return auroc_macro_ovr(scores, labels, task.num_classes);
}

ParamCensus count_trainable_params(const PromptVit& model, const MILHead& head) {
  ParamCensus c;
  c.prompt = model.prompt_param_count();
  c.head = head.param_count();
  c.backbone = model.backbone_param_count();
  c.backbone_trainable = model.backbone_trainable();
  return c;
}

}  // namespace pmil
