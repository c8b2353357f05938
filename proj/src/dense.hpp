#pragma once

// Internal dense kernels shared by the forward ops and the VJPs.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>

namespace pmil::dense {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;

// y = a[m,k] * b[k,n]
template <class T>
void matmul_nn(const T* a, const T* b, T* y, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  Map<T>(y, m, n).noalias() = CMap<T>(a, m, k) * CMap<T>(b, k, n);
}

// y += a[m,k] * b[n,k]^T
template <class T>
void matmul_nt_acc(const T* a, const T* b, T* y, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
  Map<T>(y, m, n).noalias() += CMap<T>(a, m, k) * CMap<T>(b, n, k).transpose();
}

// y += a[k,m]^T * b[k,n]
template <class T>
void matmul_tn_acc(const T* a, const T* b, T* y, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
  Map<T>(y, m, n).noalias() += CMap<T>(a, k, m).transpose() * CMap<T>(b, k, n);
}

// tanh-approximation GELU
template <class T>
inline T gelu_fwd(T x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T a = static_cast<T>(0.044715);
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(c * (x + a * x * x * x)));
}

template <class T>
inline T gelu_grad(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T a = static_cast<T>(0.044715);
  const T u = c * (x + a * x * x * x);
  const T t = std::tanh(u);
  const T du = c * (static_cast<T>(1) + static_cast<T>(3) * a * x * x);
  return static_cast<T>(0.5) * (static_cast<T>(1) + t) +
         static_cast<T>(0.5) * x * (static_cast<T>(1) - t * t) * du;
}

template <class T>
inline T sigmoid_fwd(T x) {
  if (x >= 0) {
    const T e = std::exp(-x);
    return static_cast<T>(1) / (static_cast<T>(1) + e);
  }
  const T e = std::exp(x);
  return e / (static_cast<T>(1) + e);
}

}  // namespace pmil::dense
