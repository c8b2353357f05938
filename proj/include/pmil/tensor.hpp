#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pmil/errors.hpp"

namespace pmil {

class Graph;

enum class DType { F32, F64 };

inline const char* dtype_name(DType dt) {
  return dt == DType::F32 ? "f32" : "f64";
}

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Reference-counted flat buffer. A storage is either f32 or f64; the unused
// vector stays empty. `persistent` marks parameter/data buffers that are
// excluded from saved-activation accounting.
class Storage {
 public:
  Storage(DType dtype, std::int64_t numel);

  DType dtype;
  std::vector<float> f32;
  std::vector<double> f64;
  std::uint64_t id;       // unique per storage, monotonically assigned
  bool persistent = false;
  int saved_refs = 0;     // graph nodes currently retaining this buffer

  std::int64_t numel() const {
    return dtype == DType::F32 ? static_cast<std::int64_t>(f32.size())
                               : static_cast<std::int64_t>(f64.size());
  }

  template <class T>
  T* data();
  template <class T>
  const T* data() const;
};

template <>
inline float* Storage::data<float>() { return f32.data(); }
template <>
inline double* Storage::data<double>() { return f64.data(); }
template <>
inline const float* Storage::data<float>() const { return f32.data(); }
template <>
inline const double* Storage::data<double>() const { return f64.data(); }

// N-dimensional row-major tensor with value semantics over a shared buffer.
// A tensor produced by an op under a recording graph carries (graph, node);
// tensors made in no-graph mode carry neither and cannot be backpropagated
// through.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::F64);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::F64);
  static Tensor from_vector(const Shape& shape, const std::vector<double>& v,
                            DType dtype = DType::F64);
  static Tensor scalar_tensor(double value, DType dtype = DType::F64);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::int64_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }
  std::int64_t numel() const;
  DType dtype() const { return storage_->dtype; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) { requires_grad_ = v; return *this; }
  Tensor& set_persistent(bool v) { storage_->persistent = v; return *this; }
  bool persistent() const { return storage_->persistent; }
  std::uint64_t buffer_id() const { return storage_->id; }

  template <class T>
  std::span<T> data() {
    check_dtype<T>();
    return {storage_->data<T>(), static_cast<std::size_t>(numel())};
  }
  template <class T>
  std::span<const T> data() const {
    check_dtype<T>();
    return {storage_->data<T>(), static_cast<std::size_t>(numel())};
  }

  // dtype-agnostic element access, used by tests, I/O and optimizers
  double value_at(std::int64_t flat) const;
  void set_value_at(std::int64_t flat, double v);
  double at(std::int64_t r, std::int64_t c) const { return value_at(r * cols() + c); }
  double scalar() const;
  std::vector<double> to_vector() const;

  Tensor clone() const;        // deep copy, detached
  Tensor astype(DType dt) const;
  Tensor detached() const;     // same storage, no graph linkage

  // autodiff linkage, managed by ops/Graph
  std::int64_t node() const { return node_; }
  Graph* graph() const { return graph_; }

  std::shared_ptr<Storage> storage() const { return storage_; }

 private:
  friend class Graph;
  friend Tensor make_op_output(const Shape&, DType);
  friend void bind_to_graph(Tensor&, Graph*, std::int64_t);

  template <class T>
  void check_dtype() const;

  std::shared_ptr<Storage> storage_;
  Shape shape_;
  bool requires_grad_ = false;
  std::int64_t node_ = -1;
  Graph* graph_ = nullptr;
};

template <>
inline void Tensor::check_dtype<float>() const {
  if (storage_->dtype != DType::F32)
    throw ShapeError("tensor dtype is f64, requested f32 view");
}
template <>
inline void Tensor::check_dtype<double>() const {
  if (storage_->dtype != DType::F64)
    throw ShapeError("tensor dtype is f32, requested f64 view");
}

}  // namespace pmil
