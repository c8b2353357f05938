#include "pmil/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace pmil {

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double eps) {
  if (eps <= 0.0)
    throw std::invalid_argument("grad_check: eps must be positive");

  Graph graph(GraphMode::Recording);
  GradMap grads;
  {
    GraphScope scope(graph);
    Tensor loss = f();
    grads = graph.backward(loss);
  }

  double max_rel = 0.0;
  for (Tensor& p : params) {
    const Tensor analytic = grads.grad(p);
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double orig = p.value_at(i);
      p.set_value_at(i, orig + eps);
      const double up = f().scalar();
      p.set_value_at(i, orig - eps);
      const double down = f().scalar();
      p.set_value_at(i, orig);
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.value_at(i);
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace pmil
