#include "pmil/tensor.hpp"

#include <atomic>
#include <sstream>

namespace pmil {

namespace {
std::atomic<std::uint64_t> g_next_storage_id{1};
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Storage::Storage(DType dt, std::int64_t n) : dtype(dt) {
  if (dt == DType::F32)
    f32.assign(static_cast<std::size_t>(n), 0.0f);
  else
    f64.assign(static_cast<std::size_t>(n), 0.0);
  id = g_next_storage_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  Tensor t;
  t.shape_ = shape;
  t.storage_ = std::make_shared<Storage>(dtype, shape_numel(shape));
  return t;
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) t.set_value_at(i, value);
  return t;
}

Tensor Tensor::from_vector(const Shape& shape, const std::vector<double>& v,
                           DType dtype) {
  if (shape_numel(shape) != static_cast<std::int64_t>(v.size()))
    throw ShapeError("from_vector: shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(v.size()));
  Tensor t = zeros(shape, dtype);
  for (std::size_t i = 0; i < v.size(); ++i)
    t.set_value_at(static_cast<std::int64_t>(i), v[i]);
  return t;
}

Tensor Tensor::scalar_tensor(double value, DType dtype) {
  return full({1, 1}, value, dtype);
}

std::int64_t Tensor::numel() const { return shape_numel(shape_); }

double Tensor::value_at(std::int64_t flat) const {
  return storage_->dtype == DType::F32
             ? static_cast<double>(storage_->f32[static_cast<std::size_t>(flat)])
             : storage_->f64[static_cast<std::size_t>(flat)];
}

void Tensor::set_value_at(std::int64_t flat, double v) {
  if (storage_->dtype == DType::F32)
    storage_->f32[static_cast<std::size_t>(flat)] = static_cast<float>(v);
  else
    storage_->f64[static_cast<std::size_t>(flat)] = v;
}

double Tensor::scalar() const {
  if (numel() != 1)
    throw ShapeError("scalar() on tensor of shape " + shape_str(shape_));
  return value_at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  for (std::int64_t i = 0; i < numel(); ++i)
    out[static_cast<std::size_t>(i)] = value_at(i);
  return out;
}

Tensor Tensor::clone() const {
  Tensor t = zeros(shape_, dtype());
  if (dtype() == DType::F32)
    t.storage_->f32 = storage_->f32;
  else
    t.storage_->f64 = storage_->f64;
  t.requires_grad_ = requires_grad_;
  return t;
}

Tensor Tensor::astype(DType dt) const {
  if (dt == dtype()) return clone();
  Tensor t = zeros(shape_, dt);
  for (std::int64_t i = 0; i < numel(); ++i) t.set_value_at(i, value_at(i));
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  t.graph_ = nullptr;
  t.requires_grad_ = false;
  return t;
}

}  // namespace pmil
