#include "pmil/ops.hpp"

#include <cassert>
#include <cmath>

#include "dense.hpp"

namespace pmil {

namespace {

void require_2d(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2)
    throw ShapeError(std::string(what) + ": expected a 2-d tensor, got shape " +
                     (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(what) + ": dtype mismatch (" +
                     dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) + ")");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void debug_check_finite(const Tensor& t) {
#ifndef NDEBUG
  for (std::int64_t i = 0; i < t.numel(); ++i) assert(std::isfinite(t.value_at(i)));
#else
  (void)t;
#endif
}

template <class F>
void for_dtype(DType dt, F&& f) {
  if (dt == DType::F64)
    f(double{});
  else
    f(float{});
}

bool tensor_needs(Graph* g, const Tensor& t) {
  if (t.graph() == g && t.node() >= 0) return true;  // recorded nodes imply grad
  return t.requires_grad();
}

// Per-op recording context. Inactive when no recording graph is in scope or
// no input carries gradient.
struct Rec {
  Graph* g = nullptr;
  Node node;
  std::vector<bool> input_needs;

  bool active() const { return g != nullptr; }
  bool needs(std::size_t i) const { return input_needs[i]; }
  void save(Tensor t) { node.saved.push_back(std::move(t)); }
  void finish(Tensor& out) {
    node.out_shape = out.shape();
    node.dtype = out.dtype();
    g->record(std::move(node), out);
  }
};

Rec begin_record(OpKind kind, std::initializer_list<const Tensor*> ins) {
  Graph* g = GraphScope::current();
  if (!g || !g->recording()) return {};
  std::vector<bool> needs;
  needs.reserve(ins.size());
  bool any = false;
  for (const Tensor* t : ins) {
    const bool n = tensor_needs(g, *t);
    needs.push_back(n);
    any = any || n;
  }
  if (!any) return {};
  Rec r;
  r.g = g;
  r.node.kind = kind;
  r.node.needs_grad = true;
  r.input_needs = std::move(needs);
  for (const Tensor* t : ins) {
    if (t->graph() == g && t->node() >= 0)
      r.node.inputs.push_back(t->node());
    else
      r.node.inputs.push_back(g->leaf_for(*t));
  }
  return r;
}

Rec begin_record_variadic(OpKind kind, const std::vector<Tensor>& ins) {
  Graph* g = GraphScope::current();
  if (!g || !g->recording()) return {};
  bool any = false;
  for (const Tensor& t : ins) any = any || tensor_needs(g, t);
  if (!any) return {};
  Rec r;
  r.g = g;
  r.node.kind = kind;
  r.node.needs_grad = true;
  for (const Tensor& t : ins) {
    if (t.graph() == g && t.node() >= 0)
      r.node.inputs.push_back(t.node());
    else
      r.node.inputs.push_back(g->leaf_for(t));
  }
  return r;
}

template <class T, class F>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, F&& f) {
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  auto pa = a.data<T>();
  auto pb = b.data<T>();
  auto py = y.data<T>();
  for (std::int64_t i = 0; i < a.numel(); ++i) py[i] = f(pa[i], pb[i]);
  return y;
}

template <class T, class F>
Tensor elementwise_unary(const Tensor& a, F&& f) {
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  auto pa = a.data<T>();
  auto py = y.data<T>();
  for (std::int64_t i = 0; i < a.numel(); ++i) py[i] = f(pa[i]);
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul lhs");
  require_2d(b, "matmul rhs");
  require_same_dtype(a, b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  debug_check_finite(a);
  debug_check_finite(b);
  Tensor y = Tensor::zeros({a.rows(), b.cols()}, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    dense::matmul_nn(a.data<T>().data(), b.data<T>().data(), y.data<T>().data(),
                     a.rows(), a.cols(), b.cols());
  });
  Rec r = begin_record(OpKind::Matmul, {&a, &b});
  if (r.active()) {
    r.save(r.needs(1) ? a : Tensor());  // saved[0]: lhs, for dB
    r.save(r.needs(0) ? b : Tensor());  // saved[1]: rhs, for dA
    r.finish(y);
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_2d(a, "add lhs");
  require_2d(b, "add rhs");
  require_same_dtype(a, b, "add");
  require_same_shape(a, b, "add");
  debug_check_finite(a);
  debug_check_finite(b);
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_binary<T>(a, b, [](T x, T z) { return x + z; });
  });
  Rec r = begin_record(OpKind::Add, {&a, &b});
  if (r.active()) r.finish(y);
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_2d(a, "sub lhs");
  require_2d(b, "sub rhs");
  require_same_dtype(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_binary<T>(a, b, [](T x, T z) { return x - z; });
  });
  Rec r = begin_record(OpKind::Sub, {&a, &b});
  if (r.active()) r.finish(y);
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_2d(a, "mul lhs");
  require_2d(b, "mul rhs");
  require_same_dtype(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_binary<T>(a, b, [](T x, T z) { return x * z; });
  });
  Rec r = begin_record(OpKind::Mul, {&a, &b});
  if (r.active()) {
    r.save(r.needs(1) ? a : Tensor());
    r.save(r.needs(0) ? b : Tensor());
    r.finish(y);
  }
  return y;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_2d(a, "div lhs");
  require_2d(b, "div rhs");
  require_same_dtype(a, b, "div");
  require_same_shape(a, b, "div");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_binary<T>(a, b, [](T x, T z) { return x / z; });
  });
  Rec r = begin_record(OpKind::Div, {&a, &b});
  if (r.active()) {
    r.save(b);                          // saved[0]: denominator
    r.save(r.needs(1) ? y : Tensor());  // saved[1]: quotient, for dB
    r.finish(y);
  }
  return y;
}

Tensor scale(const Tensor& a, double c) {
  require_2d(a, "scale");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [c](T x) { return static_cast<T>(x * static_cast<T>(c)); });
  });
  Rec r = begin_record(OpKind::Scale, {&a});
  if (r.active()) {
    r.node.dattr = c;
    r.finish(y);
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double c) {
  require_2d(a, "add_scalar");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [c](T x) { return static_cast<T>(x + static_cast<T>(c)); });
  });
  Rec r = begin_record(OpKind::AddScalar, {&a});
  if (r.active()) r.finish(y);
  return y;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  Tensor y = Tensor::zeros({a.cols(), a.rows()}, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    for (std::int64_t i = 0; i < a.rows(); ++i)
      for (std::int64_t j = 0; j < a.cols(); ++j)
        py[j * a.rows() + i] = pa[i * a.cols() + j];
  });
  Rec r = begin_record(OpKind::Transpose, {&a});
  if (r.active()) r.finish(y);
  return y;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  Tensor out = Tensor::zeros(shape, a.dtype());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.set_value_at(i, a.value_at(i));
  Rec r = begin_record(OpKind::Reshape, {&a});
  if (r.active()) {
    r.node.in_shape = a.shape();
    r.finish(out);
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::int64_t rows = 0;
  const std::int64_t cols = parts[0].cols();
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != cols)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) +
                       " vs " + shape_str(parts[0].shape()));
    require_same_dtype(p, parts[0], "concat_rows");
    rows += p.rows();
  }
  Tensor y = Tensor::zeros({rows, cols}, parts[0].dtype());
  for_dtype(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto py = y.data<T>();
    std::int64_t r0 = 0;
    for (const Tensor& p : parts) {
      auto pp = p.data<T>();
      std::copy(pp.begin(), pp.end(), py.begin() + r0 * cols);
      r0 += p.rows();
    }
  });
  Rec r = begin_record_variadic(OpKind::ConcatRows, parts);
  if (r.active()) {
    for (const Tensor& p : parts) r.node.extents.push_back(p.rows());
    r.finish(y);
  }
  return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::int64_t rows = parts[0].rows();
  std::int64_t cols = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    require_same_dtype(p, parts[0], "concat_cols");
    cols += p.cols();
  }
  Tensor y = Tensor::zeros({rows, cols}, parts[0].dtype());
  for_dtype(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto py = y.data<T>();
    std::int64_t c0 = 0;
    for (const Tensor& p : parts) {
      auto pp = p.data<T>();
      for (std::int64_t i = 0; i < rows; ++i)
        std::copy(pp.begin() + i * p.cols(), pp.begin() + (i + 1) * p.cols(),
                  py.begin() + i * cols + c0);
      c0 += p.cols();
    }
  });
  Rec r = begin_record_variadic(OpKind::ConcatCols, parts);
  if (r.active()) {
    for (const Tensor& p : parts) r.node.extents.push_back(p.cols());
    r.finish(y);
  }
  return y;
}

Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len) {
  require_2d(a, "slice_rows");
  if (start < 0 || len < 1 || start + len > a.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " + shape_str(a.shape()));
  Tensor y = Tensor::zeros({len, a.cols()}, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    std::copy(pa.begin() + start * a.cols(), pa.begin() + (start + len) * a.cols(),
              py.begin());
  });
  Rec r = begin_record(OpKind::SliceRows, {&a});
  if (r.active()) {
    r.node.iattr0 = start;
    r.node.iattr1 = len;
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len) {
  require_2d(a, "slice_cols");
  if (start < 0 || len < 1 || start + len > a.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " + shape_str(a.shape()));
  Tensor y = Tensor::zeros({a.rows(), len}, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    for (std::int64_t i = 0; i < a.rows(); ++i)
      std::copy(pa.begin() + i * a.cols() + start, pa.begin() + i * a.cols() + start + len,
                py.begin() + i * len);
  });
  Rec r = begin_record(OpKind::SliceCols, {&a});
  if (r.active()) {
    r.node.iattr0 = start;
    r.node.iattr1 = len;
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  require_2d(a, "broadcast_to");
  if (shape.size() != 2)
    throw ShapeError("broadcast_to: target must be 2-d, got " + shape_str(shape));
  const bool rows_ok = a.rows() == shape[0] || a.rows() == 1;
  const bool cols_ok = a.cols() == shape[1] || a.cols() == 1;
  if (!rows_ok || !cols_ok)
    throw ShapeError("broadcast_to: cannot broadcast " + shape_str(a.shape()) +
                     " to " + shape_str(shape));
  Tensor y = Tensor::zeros(shape, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    for (std::int64_t i = 0; i < shape[0]; ++i) {
      const std::int64_t si = a.rows() == 1 ? 0 : i;
      for (std::int64_t j = 0; j < shape[1]; ++j) {
        const std::int64_t sj = a.cols() == 1 ? 0 : j;
        py[i * shape[1] + j] = pa[si * a.cols() + sj];
      }
    }
  });
  Rec r = begin_record(OpKind::BroadcastTo, {&a});
  if (r.active()) {
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor softmax(const Tensor& a) {
  require_2d(a, "softmax");
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    const std::int64_t R = a.rows(), C = a.cols();
    for (std::int64_t i = 0; i < R; ++i) {
      T m = pa[i * C];
      for (std::int64_t j = 1; j < C; ++j) m = std::max(m, pa[i * C + j]);
      T s = 0;
      for (std::int64_t j = 0; j < C; ++j) {
        const T e = std::exp(pa[i * C + j] - m);
        py[i * C + j] = e;
        s += e;
      }
      for (std::int64_t j = 0; j < C; ++j) py[i * C + j] /= s;
    }
  });
  Rec r = begin_record(OpKind::Softmax, {&a});
  if (r.active()) {
    r.save(y);
    r.finish(y);
  }
  return y;
}

Tensor gelu(const Tensor& a) {
  require_2d(a, "gelu");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [](T x) { return dense::gelu_fwd(x); });
  });
  Rec r = begin_record(OpKind::Gelu, {&a});
  if (r.active()) {
    r.save(a);
    r.finish(y);
  }
  return y;
}

Tensor relu(const Tensor& a) {
  require_2d(a, "relu");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [](T x) { return x > 0 ? x : static_cast<T>(0); });
  });
  Rec r = begin_record(OpKind::Relu, {&a});
  if (r.active()) {
    r.save(a);
    r.finish(y);
  }
  return y;
}

Tensor tanh(const Tensor& a) {
  require_2d(a, "tanh");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [](T x) { return std::tanh(x); });
  });
  Rec r = begin_record(OpKind::Tanh, {&a});
  if (r.active()) {
    r.save(y);
    r.finish(y);
  }
  return y;
}

Tensor sigmoid(const Tensor& a) {
  require_2d(a, "sigmoid");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [](T x) { return dense::sigmoid_fwd(x); });
  });
  Rec r = begin_record(OpKind::Sigmoid, {&a});
  if (r.active()) {
    r.save(y);
    r.finish(y);
  }
  return y;
}

Tensor exp(const Tensor& a) {
  require_2d(a, "exp");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [](T x) { return std::exp(x); });
  });
  Rec r = begin_record(OpKind::Exp, {&a});
  if (r.active()) {
    r.save(y);
    r.finish(y);
  }
  return y;
}

Tensor log(const Tensor& a) {
  require_2d(a, "log");
  Tensor y;
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    y = elementwise_unary<T>(a, [](T x) { return std::log(x); });
  });
  Rec r = begin_record(OpKind::Log, {&a});
  if (r.active()) {
    r.save(a);
    r.finish(y);
  }
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_2d(x, "layernorm input");
  require_2d(gamma, "layernorm gamma");
  require_2d(beta, "layernorm beta");
  require_same_dtype(x, gamma, "layernorm");
  require_same_dtype(x, beta, "layernorm");
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw ShapeError("layernorm: affine params must be [1, " + std::to_string(x.cols()) +
                     "], got gamma " + shape_str(gamma.shape()) + ", beta " +
                     shape_str(beta.shape()));
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  Tensor inv_std = Tensor::zeros({x.rows(), 1}, x.dtype());
  for_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto pg = gamma.data<T>();
    auto pb = beta.data<T>();
    auto py = y.data<T>();
    auto ph = xhat.data<T>();
    auto pi = inv_std.data<T>();
    const std::int64_t R = x.rows(), D = x.cols();
    for (std::int64_t i = 0; i < R; ++i) {
      T mu = 0;
      for (std::int64_t j = 0; j < D; ++j) mu += px[i * D + j];
      mu /= static_cast<T>(D);
      T var = 0;
      for (std::int64_t j = 0; j < D; ++j) {
        const T d = px[i * D + j] - mu;
        var += d * d;
      }
      var /= static_cast<T>(D);
      const T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
      pi[i] = inv;
      for (std::int64_t j = 0; j < D; ++j) {
        const T h = (px[i * D + j] - mu) * inv;
        ph[i * D + j] = h;
        py[i * D + j] = pg[j] * h + pb[j];
      }
    }
  });
  Rec r = begin_record(OpKind::LayerNorm, {&x, &gamma, &beta});
  if (r.active()) {
    r.save(xhat);                            // saved[0]: for dX and dGamma
    r.save(r.needs(0) ? inv_std : Tensor()); // saved[1]: for dX
    r.save(r.needs(0) ? gamma : Tensor());   // saved[2]: for dX
    r.finish(y);
  }
  return y;
}

Tensor mean_all(const Tensor& a) {
  require_2d(a, "mean_all");
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a.value_at(i);
  Tensor y = Tensor::scalar_tensor(s / static_cast<double>(a.numel()), a.dtype());
  Rec r = begin_record(OpKind::MeanAll, {&a});
  if (r.active()) {
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor mean_rows(const Tensor& a) {
  require_2d(a, "mean_rows");
  Tensor y = Tensor::zeros({1, a.cols()}, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    for (std::int64_t i = 0; i < a.rows(); ++i)
      for (std::int64_t j = 0; j < a.cols(); ++j) py[j] += pa[i * a.cols() + j];
    for (std::int64_t j = 0; j < a.cols(); ++j) py[j] /= static_cast<T>(a.rows());
  });
  Rec r = begin_record(OpKind::MeanRows, {&a});
  if (r.active()) {
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor sum_all(const Tensor& a) {
  require_2d(a, "sum_all");
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a.value_at(i);
  Tensor y = Tensor::scalar_tensor(s, a.dtype());
  Rec r = begin_record(OpKind::SumAll, {&a});
  if (r.active()) {
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor sum_rows(const Tensor& a) {
  require_2d(a, "sum_rows");
  Tensor y = Tensor::zeros({1, a.cols()}, a.dtype());
  for_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto py = y.data<T>();
    for (std::int64_t i = 0; i < a.rows(); ++i)
      for (std::int64_t j = 0; j < a.cols(); ++j) py[j] += pa[i * a.cols() + j];
  });
  Rec r = begin_record(OpKind::SumRows, {&a});
  if (r.active()) {
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor max_all(const Tensor& a) {
  require_2d(a, "max_all");
  std::int64_t arg = 0;
  double best = a.value_at(0);
  for (std::int64_t i = 1; i < a.numel(); ++i) {
    if (a.value_at(i) > best) {
      best = a.value_at(i);
      arg = i;
    }
  }
  Tensor y = Tensor::scalar_tensor(best, a.dtype());
  Rec r = begin_record(OpKind::MaxAll, {&a});
  if (r.active()) {
    r.node.iattr0 = arg;
    r.node.in_shape = a.shape();
    r.finish(y);
  }
  return y;
}

Tensor bce_with_logit(const Tensor& logit, double target) {
  require_2d(logit, "bce_with_logit");
  if (logit.numel() != 1)
    throw ShapeError("bce_with_logit: expected a single logit, got " +
                     shape_str(logit.shape()));
  if (target != 0.0 && target != 1.0)
    throw ShapeError("bce_with_logit: target must be 0 or 1");
  const double z = logit.value_at(0);
  const double loss = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  Tensor y = Tensor::scalar_tensor(loss, logit.dtype());
  Rec r = begin_record(OpKind::BceLogit, {&logit});
  if (r.active()) {
    r.node.dattr = target;
    r.save(logit);
    r.finish(y);
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return add(y, broadcast_to(b, y.shape()));
}

}  // namespace pmil
