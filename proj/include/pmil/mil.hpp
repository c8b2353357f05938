#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmil/optim.hpp"
#include "pmil/tensor.hpp"
#include "pmil/vit.hpp"

namespace pmil {

enum class HeadKind { DSMIL, GatedAttention, MeanPool };
enum class TaskKind { SubtypeBinary, Multiclass };
enum class LossKind { BCE, CE };

struct TaskSpec {
  TaskKind kind = TaskKind::SubtypeBinary;
  int num_classes = 2;

  LossKind loss_kind() const {
    return kind == TaskKind::SubtypeBinary ? LossKind::BCE : LossKind::CE;
  }
  // single logit under BCE, one per class under CE
  int logits_dim() const { return kind == TaskKind::SubtypeBinary ? 1 : num_classes; }
  void validate() const;

  bool operator==(const TaskSpec&) const = default;
};

struct Prediction {
  Tensor logits;                             // [1, logits_dim], graph-linked
  std::vector<double> probs;                 // per-class probabilities
  std::optional<int> critical_index;         // DSMIL stream-1 pick
  std::optional<std::vector<double>> attention;  // per-instance weights, sum 1
};

// Bag-level classifier G(.). DSMIL follows the dual-stream design: a linear
// instance classifier picks the top-scored critical instance, a second stream
// attends every instance's query against the critical query and scores the
// aggregated value; the bag logits average the two streams.
class MILHead {
 public:
  MILHead(HeadKind kind, int in_dim, const TaskSpec& task, std::uint64_t seed,
          DType dtype = DType::F64);

  HeadKind kind() const { return kind_; }
  int in_dim() const { return in_dim_; }
  const TaskSpec& task() const { return task_; }

  Prediction aggregate(const Tensor& h) const;

  std::vector<NamedParam> params() const;
  std::int64_t param_count() const;

 private:
  HeadKind kind_;
  int in_dim_;
  TaskSpec task_;
  DType dtype_;

  // DSMIL
  Tensor inst_w_, inst_b_;  // stream 1 instance classifier
  Tensor query_w_, query_b_;
  Tensor value_w_, value_b_;
  Tensor bag_w_, bag_b_;
  // gated attention
  Tensor gate_v_, gate_u_, gate_w_;
  // shared final linear (gated attention / mean pool)
  Tensor cls_w_, cls_b_;
};

// Bag loss per task: BCE on a single logit for subtype tasks, CE with the
// stable log-sum-exp form otherwise.
Tensor mil_loss(const Prediction& pred, int label, const TaskSpec& task);

int predicted_class(const Prediction& pred, const TaskSpec& task);

double accuracy(const std::vector<Prediction>& preds, const std::vector<int>& labels,
                const TaskSpec& task);

// Mann-Whitney AUROC, ties counted half. Throws AurocUndefinedError when a
// class side is empty.
double auroc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted mean of one-vs-rest AUROC over the classes present in `labels`.
double auroc_macro_ovr(const std::vector<std::vector<double>>& class_scores,
                       const std::vector<int>& labels, int num_classes);

// AUROC for a prediction set under the task (positive-class score for binary,
// macro one-vs-rest over softmax scores for multiclass).
double auroc(const std::vector<Prediction>& preds, const std::vector<int>& labels,
             const TaskSpec& task);

ParamCensus count_trainable_params(const PromptVit& model, const MILHead& head);

}  // namespace pmil
