#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmil/tensor.hpp"

namespace pmil {

enum class LabelRule { PresenceOR, MajorityVote };

// Synthetic bag generator spec. Witness instances carry a class-specific
// oriented grating over background noise; the bag label follows label_rule.
struct GenSpec {
  int num_classes = 2;
  int n_min = 16;
  int n_max = 64;
  int image_size = 32;
  int channels = 3;
  std::vector<double> witness_rate = {0.5, 0.5};  // per class
  std::vector<double> tex_freq = {3.0, 6.0};      // cycles per image, per class
  std::vector<double> tex_angle = {0.0, 1.1};     // radians, per class
  double tex_amplitude = 1.0;
  double phase_jitter = 0.25;  // fraction of +-pi/2 phase wobble per instance
  double noise_level = 0.3;
  LabelRule label_rule = LabelRule::PresenceOR;
  int train_bags = 200;
  int val_bags = 50;
  int test_bags = 100;
  std::uint64_t seed = 7;

  void validate() const;

  bool operator==(const GenSpec&) const = default;
};

// One synthetic slide: n instance images in [0,1], a bag label, and hidden
// per-instance witness flags (-1 background, otherwise witness class). The
// latents exist for oracle-side checks only and are never model input.
struct Bag {
  int n = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;  // n * H * W * C, instance-major
  int label = 0;
  std::uint64_t bag_id = 0;
  std::vector<std::int32_t> latents;

  std::int64_t instance_elems() const {
    return static_cast<std::int64_t>(height) * width * channels;
  }
  Tensor instance(int i, DType dtype = DType::F64) const;  // [H, W, C]
  std::vector<Tensor> instance_patches(int patch_size, DType dtype = DType::F64) const;
};

struct Dataset {
  std::vector<Bag> train, val, test;
  GenSpec spec;
};

Dataset generate_dataset(const GenSpec& spec);

// Label recomputed from instance latents per the spec's rule; used by tests
// to confirm label-rule soundness.
int recompute_label(const Bag& bag, LabelRule rule);

// Order-sensitive hash over ids, labels and raw instance bytes of all splits.
std::uint64_t dataset_fingerprint(const Dataset& ds);

}  // namespace pmil
