#include "pmil/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "dense.hpp"

namespace pmil {

namespace {
thread_local Graph* g_current = nullptr;
}

GraphScope::GraphScope(Graph& g) : prev_(g_current) { g_current = &g; }
GraphScope::~GraphScope() { g_current = prev_; }
Graph* GraphScope::current() { return g_current; }

void GradMap::add(std::uint64_t buffer_id, Tensor grad) {
  grads_[buffer_id] = std::move(grad);
}

bool GradMap::has(const Tensor& param) const {
  return grads_.count(param.buffer_id()) > 0;
}

Tensor GradMap::grad(const Tensor& param) const {
  auto it = grads_.find(param.buffer_id());
  if (it != grads_.end()) return it->second;
  return Tensor::zeros(param.shape(), param.dtype());
}

Graph::Graph(GraphMode mode, MemMeter* meter) : mode_(mode), meter_(meter) {}

Graph::~Graph() { clear(); }

void Graph::clear() {
  for (Node& n : nodes_) release_node(n);
  nodes_.clear();
  leaf_index_.clear();
}

void Graph::save_tensor(Node& node, const Tensor& t) {
  (void)node;
  auto st = t.storage();
  if (st->persistent) return;
  if (st->saved_refs++ == 0 && meter_) meter_->on_save(st->numel());
}

void Graph::release_node(Node& node) {
  for (Tensor& s : node.saved) {
    if (!s.defined()) continue;
    auto st = s.storage();
    if (!st->persistent) {
      if (--st->saved_refs == 0 && meter_) meter_->on_free(st->numel());
    }
  }
  node.saved.clear();
}

std::int64_t Graph::record(Node&& node, Tensor& out) {
  if (mode_ != GraphMode::Recording)
    throw std::logic_error("Graph::record on an inference graph");
  nodes_.push_back(std::move(node));
  Node& n = nodes_.back();
  for (const Tensor& s : n.saved)
    if (s.defined()) save_tensor(n, s);
  const std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1;
  out.node_ = id;
  out.graph_ = this;
  return id;
}

std::int64_t Graph::leaf_for(const Tensor& t) {
  auto it = leaf_index_.find(t.buffer_id());
  if (it != leaf_index_.end()) return it->second;
  Node n;
  n.kind = OpKind::Leaf;
  n.needs_grad = t.requires_grad();
  n.out_shape = t.shape();
  n.dtype = t.dtype();
  n.leaf_storage = t.buffer_id();
  nodes_.push_back(std::move(n));
  const std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1;
  leaf_index_.emplace(t.buffer_id(), id);
  return id;
}

namespace {

template <class T>
void vjp_apply(const Node& n, const Tensor& dY, std::vector<Tensor>& grads,
               const std::vector<Node>& nodes) {
  auto need = [&](std::size_t i) {
    return nodes[static_cast<std::size_t>(n.inputs[i])].needs_grad;
  };
  auto acc = [&](std::size_t i) -> Tensor& {
    Tensor& g = grads[static_cast<std::size_t>(n.inputs[i])];
    if (!g.defined()) {
      const Node& in = nodes[static_cast<std::size_t>(n.inputs[i])];
      g = Tensor::zeros(in.out_shape, in.dtype);
    }
    return g;
  };
  auto dy = dY.data<T>();

  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::Matmul: {
      const std::int64_t m = n.out_shape[0], c = n.out_shape[1];
      if (need(0)) {
        const Tensor& b = n.saved[1];
        dense::matmul_nt_acc(dy.data(), b.data<T>().data(), acc(0).template data<T>().data(),
                             m, c, b.rows());
      }
      if (need(1)) {
        const Tensor& a = n.saved[0];
        dense::matmul_tn_acc(a.data<T>().data(), dy.data(), acc(1).template data<T>().data(),
                             a.cols(), m, c);
      }
      break;
    }
    case OpKind::Add: {
      for (std::size_t s = 0; s < 2; ++s) {
        if (!need(s)) continue;
        auto g = acc(s).template data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      break;
    }
    case OpKind::Sub: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      if (need(1)) {
        auto g = acc(1).template data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] -= dy[i];
      }
      break;
    }
    case OpKind::Mul: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto b = n.saved[1].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * b[i];
      }
      if (need(1)) {
        auto g = acc(1).template data<T>();
        auto a = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * a[i];
      }
      break;
    }
    case OpKind::Div: {
      auto b = n.saved[0].data<T>();
      if (need(0)) {
        auto g = acc(0).template data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] / b[i];
      }
      if (need(1)) {
        auto g = acc(1).template data<T>();
        auto y = n.saved[1].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] -= dy[i] * y[i] / b[i];
      }
      break;
    }
    case OpKind::Scale: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const T c = static_cast<T>(n.dattr);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += c * dy[i];
      }
      break;
    }
    case OpKind::AddScalar: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      break;
    }
    case OpKind::Transpose: {
      if (need(0)) {
        // out[i,j] = a[j,i]; out shape [c, r], input shape [r, c]
        auto g = acc(0).template data<T>();
        const std::int64_t c = n.out_shape[0], r = n.out_shape[1];
        for (std::int64_t i = 0; i < c; ++i)
          for (std::int64_t j = 0; j < r; ++j) g[j * c + i] += dy[i * r + j];
      }
      break;
    }
    case OpKind::Reshape: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      break;
    }
    case OpKind::ConcatRows: {
      const std::int64_t cols = n.out_shape[1];
      std::int64_t r0 = 0;
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        const std::int64_t rows = n.extents[s];
        if (need(s)) {
          auto g = acc(s).template data<T>();
          for (std::int64_t i = 0; i < rows * cols; ++i) g[i] += dy[r0 * cols + i];
        }
        r0 += rows;
      }
      break;
    }
    case OpKind::ConcatCols: {
      const std::int64_t rows = n.out_shape[0], cols = n.out_shape[1];
      std::int64_t c0 = 0;
      for (std::size_t s = 0; s < n.inputs.size(); ++s) {
        const std::int64_t w = n.extents[s];
        if (need(s)) {
          auto g = acc(s).template data<T>();
          for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < w; ++j)
              g[i * w + j] += dy[i * cols + c0 + j];
        }
        c0 += w;
      }
      break;
    }
    case OpKind::SliceRows: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const std::int64_t cols = n.in_shape[1];
        for (std::int64_t i = 0; i < n.iattr1 * cols; ++i)
          g[n.iattr0 * cols + i] += dy[i];
      }
      break;
    }
    case OpKind::SliceCols: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const std::int64_t rows = n.in_shape[0], cols = n.in_shape[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < n.iattr1; ++j)
            g[i * cols + n.iattr0 + j] += dy[i * n.iattr1 + j];
      }
      break;
    }
    case OpKind::BroadcastTo: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const std::int64_t R = n.out_shape[0], C = n.out_shape[1];
        const std::int64_t sr = n.in_shape[0], sc = n.in_shape[1];
        for (std::int64_t i = 0; i < R; ++i) {
          const std::int64_t si = sr == 1 ? 0 : i;
          for (std::int64_t j = 0; j < C; ++j) {
            const std::int64_t sj = sc == 1 ? 0 : j;
            g[si * sc + sj] += dy[i * C + j];
          }
        }
      }
      break;
    }
    case OpKind::Softmax: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto y = n.saved[0].data<T>();
        const std::int64_t R = n.out_shape[0], C = n.out_shape[1];
        for (std::int64_t i = 0; i < R; ++i) {
          T dot = 0;
          for (std::int64_t j = 0; j < C; ++j) dot += dy[i * C + j] * y[i * C + j];
          for (std::int64_t j = 0; j < C; ++j)
            g[i * C + j] += y[i * C + j] * (dy[i * C + j] - dot);
        }
      }
      break;
    }
    case OpKind::Gelu: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto x = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i)
          g[i] += dy[i] * dense::gelu_grad(x[i]);
      }
      break;
    }
    case OpKind::Relu: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto x = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i)
          g[i] += x[i] > 0 ? dy[i] : static_cast<T>(0);
      }
      break;
    }
    case OpKind::Tanh: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto y = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i)
          g[i] += dy[i] * (static_cast<T>(1) - y[i] * y[i]);
      }
      break;
    }
    case OpKind::Sigmoid: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto y = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i)
          g[i] += dy[i] * y[i] * (static_cast<T>(1) - y[i]);
      }
      break;
    }
    case OpKind::Exp: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto y = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * y[i];
      }
      break;
    }
    case OpKind::Log: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto x = n.saved[0].data<T>();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] / x[i];
      }
      break;
    }
    case OpKind::LayerNorm: {
      const std::int64_t R = n.out_shape[0], D = n.out_shape[1];
      auto xh = n.saved[0].data<T>();
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto inv = n.saved[1].data<T>();
        auto gm = n.saved[2].data<T>();
        for (std::int64_t i = 0; i < R; ++i) {
          T m1 = 0, m2 = 0;
          for (std::int64_t j = 0; j < D; ++j) {
            const T dxh = dy[i * D + j] * gm[j];
            m1 += dxh;
            m2 += dxh * xh[i * D + j];
          }
          m1 /= static_cast<T>(D);
          m2 /= static_cast<T>(D);
          for (std::int64_t j = 0; j < D; ++j) {
            const T dxh = dy[i * D + j] * gm[j];
            g[i * D + j] += inv[i] * (dxh - m1 - xh[i * D + j] * m2);
          }
        }
      }
      if (need(1)) {
        auto g = acc(1).template data<T>();
        for (std::int64_t i = 0; i < R; ++i)
          for (std::int64_t j = 0; j < D; ++j) g[j] += dy[i * D + j] * xh[i * D + j];
      }
      if (need(2)) {
        auto g = acc(2).template data<T>();
        for (std::int64_t i = 0; i < R; ++i)
          for (std::int64_t j = 0; j < D; ++j) g[j] += dy[i * D + j];
      }
      break;
    }
    case OpKind::MeanAll: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const T v = dy[0] / static_cast<T>(shape_numel(n.in_shape));
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += v;
      }
      break;
    }
    case OpKind::MeanRows: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const std::int64_t R = n.in_shape[0], C = n.in_shape[1];
        const T inv = static_cast<T>(1) / static_cast<T>(R);
        for (std::int64_t i = 0; i < R; ++i)
          for (std::int64_t j = 0; j < C; ++j) g[i * C + j] += dy[j] * inv;
      }
      break;
    }
    case OpKind::SumAll: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[0];
      }
      break;
    }
    case OpKind::SumRows: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        const std::int64_t R = n.in_shape[0], C = n.in_shape[1];
        for (std::int64_t i = 0; i < R; ++i)
          for (std::int64_t j = 0; j < C; ++j) g[i * C + j] += dy[j];
      }
      break;
    }
    case OpKind::MaxAll: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        g[static_cast<std::size_t>(n.iattr0)] += dy[0];
      }
      break;
    }
    case OpKind::BceLogit: {
      if (need(0)) {
        auto g = acc(0).template data<T>();
        auto z = n.saved[0].data<T>();
        g[0] += dy[0] * (dense::sigmoid_fwd(z[0]) - static_cast<T>(n.dattr));
      }
      break;
    }
  }
}

}  // namespace

GradMap Graph::backward(const Tensor& loss) {
  if (mode_ != GraphMode::Recording)
    throw std::logic_error("backward: graph is in inference mode");
  if (loss.graph() != this || loss.node() < 0)
    throw std::logic_error("backward: loss was not recorded on this graph");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  return run_backward(loss.node(), Tensor::full({1, 1}, 1.0, loss.dtype()));
}

GradMap Graph::backward_with_seed(const Tensor& output, const Tensor& seed) {
  if (mode_ != GraphMode::Recording)
    throw std::logic_error("backward_with_seed: graph is in inference mode");
  if (output.graph() != this || output.node() < 0)
    throw std::logic_error("backward_with_seed: output was not recorded on this graph");
  if (seed.shape() != output.shape())
    throw ShapeError("backward_with_seed: seed shape " + shape_str(seed.shape()) +
                     " does not match output shape " + shape_str(output.shape()));
  return run_backward(output.node(), seed.astype(output.dtype()));
}

GradMap Graph::run_backward(std::int64_t root, Tensor seed) {
  if (used_backward_)
    throw std::logic_error("backward: graph already consumed by a previous backward");
  used_backward_ = true;

  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(root)] = std::move(seed);

  for (std::int64_t id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.kind == OpKind::Leaf) continue;
    Tensor& dy = grads[static_cast<std::size_t>(id)];
    if (!dy.defined()) continue;
    if (n.dtype == DType::F64)
      vjp_apply<double>(n, dy, grads, nodes_);
    else
      vjp_apply<float>(n, dy, grads, nodes_);
    release_node(n);
    dy = Tensor();  // cotangent consumed
  }

  GradMap gm;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != OpKind::Leaf || !n.needs_grad) continue;
    if (grads[i].defined())
      gm.add(n.leaf_storage, grads[i].detached());
    else
      gm.add(n.leaf_storage, Tensor::zeros(n.out_shape, n.dtype));
  }
  return gm;
}

}  // namespace pmil
