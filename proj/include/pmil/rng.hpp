#pragma once

#include <cstdint>
#include <random>

#include "pmil/tensor.hpp"

namespace pmil {

// splitmix64 step; used to derive independent per-purpose seeds so that e.g.
// prompt initialization never shifts the backbone's stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return splitmix64(base ^ splitmix64(tag));
}

// stream tags
namespace seed_tag {
constexpr std::uint64_t kBackbone = 0xb0;
constexpr std::uint64_t kPrompt = 0x9a;
constexpr std::uint64_t kHead = 0x4e;
constexpr std::uint64_t kData = 0xda;
constexpr std::uint64_t kShuffle = 0x5f;
constexpr std::uint64_t kPretrain = 0x97;
}  // namespace seed_tag

using Rng = std::mt19937_64;

inline void fill_normal(Tensor& t, Rng& rng, double stddev, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set_value_at(i, dist(rng));
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set_value_at(i, dist(rng));
}

inline Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                    DType dtype = DType::F64) {
  Tensor t = Tensor::zeros(shape, dtype);
  fill_normal(t, rng, stddev);
  return t;
}

}  // namespace pmil
