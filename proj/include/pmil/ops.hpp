#pragma once

#include <vector>

#include "pmil/graph.hpp"
#include "pmil/tensor.hpp"

// Differentiable primitives. All graph ops work on 2-D tensors; scalars are
// [1,1]. When a Recording graph is in scope and some input needs a gradient,
// the op appends a tape node carrying the minimum activations its VJP needs.

namespace pmil {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor broadcast_to(const Tensor& a, const Shape& shape);

Tensor softmax(const Tensor& a);  // row-wise over the last axis
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// Row-wise layer normalization with affine parameters gamma, beta of shape
// [1, d]. eps guards zero variance (a constant row normalizes to beta).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

Tensor mean_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [n,d] -> [1,d]
Tensor sum_all(const Tensor& a);
Tensor sum_rows(const Tensor& a);   // [n,d] -> [1,d]
Tensor max_all(const Tensor& a);    // subgradient flows to the first argmax

// Numerically stable binary cross entropy on a single logit, target in {0,1}.
Tensor bce_with_logit(const Tensor& logit, double target);

// x[n,in] * w[in,out] + b[1,out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace pmil
