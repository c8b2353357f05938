#include "pmil/optim.hpp"

#include <cmath>

#include "pmil/errors.hpp"

namespace pmil {

double cosine_lr(std::int64_t t, const CosineSchedule& s) {
  if (t < 0) throw std::invalid_argument("cosine_lr: negative step");
  if (t >= s.t_max) return s.eta_min;
  const double pi = 3.14159265358979323846;
  return s.eta_min + 0.5 * (s.base_lr - s.eta_min) *
                         (1.0 + std::cos(pi * static_cast<double>(t) /
                                         static_cast<double>(s.t_max)));
}

void Optimizer::step(std::vector<NamedParam>& params, const GradMap& grads, double lr) {
  for (NamedParam& p : params) step_one(p.name, p.tensor, grads.grad(p.tensor), lr);
}

void Optimizer::step_one(const std::string& name, Tensor& param, const Tensor& grad,
                         double lr) {
  if (grad.shape() != param.shape())
    throw ShapeError("optimizer: gradient shape " + shape_str(grad.shape()) +
                     " does not match parameter '" + name + "' " +
                     shape_str(param.shape()));
  State& st = states_[param.buffer_id()];
  if (!st.m.defined()) {
    st.m = Tensor::zeros(param.shape(), DType::F64);
    st.v = Tensor::zeros(param.shape(), DType::F64);
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));

  auto m = st.m.data<double>();
  auto v = st.v.data<double>();
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    double g = grad.value_at(i);
    if (!std::isfinite(g))
      throw NumericError("optimizer: non-finite gradient for parameter '" + name +
                         "' at index " + std::to_string(i));
    double p = param.value_at(i);
    if (kind_ == OptimKind::Adam) g += weight_decay_ * p;

    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;

    if (kind_ == OptimKind::AdamW) p -= lr * weight_decay_ * p;
    p -= lr * mhat / (std::sqrt(vhat) + eps_);
    param.set_value_at(i, p);
  }
}

std::int64_t Optimizer::step_count(const Tensor& param) const {
  auto it = states_.find(param.buffer_id());
  return it == states_.end() ? 0 : it->second.t;
}

}  // namespace pmil
