#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "pmil/tensor.hpp"

namespace pmil {

enum class GraphMode { Recording, Inference };

// Counts tensor elements retained for backward. Buffers are counted once per
// storage (refcounted), and persistent buffers (parameters, dataset inputs)
// are excluded, so the meter tracks freshly materialized activations only.
// Device-independent stand-in for activation memory.
class MemMeter {
 public:
  void on_save(std::int64_t elems) {
    live_ += elems;
    if (live_ > peak_) peak_ = live_;
  }
  void on_free(std::int64_t elems) { live_ -= elems; }
  void reset() { live_ = 0; peak_ = 0; }

  std::int64_t live_activation_elems() const { return live_; }
  std::int64_t peak_activation_elems() const { return peak_; }

 private:
  std::int64_t live_ = 0;
  std::int64_t peak_ = 0;
};

enum class OpKind {
  Leaf,
  Matmul,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  Transpose,
  Reshape,
  ConcatRows,
  ConcatCols,
  SliceRows,
  SliceCols,
  BroadcastTo,
  Softmax,
  Gelu,
  Relu,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  LayerNorm,
  MeanAll,
  MeanRows,
  SumAll,
  SumRows,
  MaxAll,
  BceLogit,
};

struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<std::int64_t> inputs;
  std::vector<Tensor> saved;      // minimum set the VJP needs, meter-counted
  Shape out_shape;
  DType dtype = DType::F64;
  bool needs_grad = false;        // leaves: requires_grad; interior nodes: always true

  double dattr = 0.0;             // op scalar (scale factor, added constant, label)
  std::int64_t iattr0 = 0;        // axis offsets / argmax index
  std::int64_t iattr1 = 0;
  std::vector<std::int64_t> extents;  // per-input extents for concat
  Shape in_shape;                 // original shape for reshape/broadcast/slice

  std::uint64_t leaf_storage = 0; // Leaf only
};

// Gradients keyed by parameter buffer id.
class GradMap {
 public:
  void add(std::uint64_t buffer_id, Tensor grad);
  bool has(const Tensor& param) const;
  // Gradient for `param`; zeros of the param's shape when the leaf was not
  // reached by backward.
  Tensor grad(const Tensor& param) const;
  std::size_t size() const { return grads_.size(); }
  const std::map<std::uint64_t, Tensor>& by_buffer() const { return grads_; }

 private:
  std::map<std::uint64_t, Tensor> grads_;
};

// Reverse-mode tape. Ops append records while a Recording graph is in scope;
// an Inference graph records nothing and saves nothing. Single-owner,
// single-threaded per training run.
class Graph {
 public:
  explicit Graph(GraphMode mode, MemMeter* meter = nullptr);
  ~Graph();

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  GraphMode mode() const { return mode_; }
  bool recording() const { return mode_ == GraphMode::Recording; }
  std::int64_t num_nodes() const { return static_cast<std::int64_t>(nodes_.size()); }

  // Backward from a scalar loss. One backward per graph.
  GradMap backward(const Tensor& loss);
  // Backward from a non-scalar output with an externally supplied cotangent;
  // equal to backward(sum(output * seed)) with seed treated as a constant.
  GradMap backward_with_seed(const Tensor& output, const Tensor& seed);

  void clear();  // drop all nodes and saved activations

  // recording interface (used by ops)
  std::int64_t record(Node&& node, Tensor& out);
  std::int64_t leaf_for(const Tensor& t);
  bool node_needs_grad(std::int64_t id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool used_backward() const { return used_backward_; }

 private:
  GradMap run_backward(std::int64_t root, Tensor seed);
  void save_tensor(Node& node, const Tensor& t);
  void release_node(Node& node);

  GraphMode mode_;
  MemMeter* meter_;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::int64_t> leaf_index_;
  bool used_backward_ = false;
};

// RAII scope installing the active graph for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

  static Graph* current();

 private:
  Graph* prev_;
};

}  // namespace pmil
