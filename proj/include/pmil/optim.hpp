#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmil/graph.hpp"
#include "pmil/tensor.hpp"

namespace pmil {

enum class OptimKind { Adam, AdamW };

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct CosineSchedule {
  double base_lr = 1e-3;
  double eta_min = 0.0;
  std::int64_t t_max = 1;
};

// eta_min + 0.5 (base - eta_min) (1 + cos(pi t / t_max)); t past t_max clamps
// to eta_min.
double cosine_lr(std::int64_t t, const CosineSchedule& s);

// Adam / AdamW with bias-corrected moments (beta1 0.9, beta2 0.999, eps 1e-8).
// AdamW decays the parameter directly before the moment term; Adam folds
// weight decay into the gradient. Moment state is kept in f64 regardless of
// parameter dtype.
class Optimizer {
 public:
  Optimizer(OptimKind kind, double weight_decay)
      : kind_(kind), weight_decay_(weight_decay) {}

  void step(std::vector<NamedParam>& params, const GradMap& grads, double lr);
  void step_one(const std::string& name, Tensor& param, const Tensor& grad, double lr);

  std::int64_t step_count(const Tensor& param) const;
  OptimKind kind() const { return kind_; }
  double weight_decay() const { return weight_decay_; }

 private:
  struct State {
    Tensor m, v;
    std::int64_t t = 0;
  };

  OptimKind kind_;
  double weight_decay_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::map<std::uint64_t, State> states_;
};

}  // namespace pmil
