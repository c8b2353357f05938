#pragma once

#include <string>
#include <vector>

#include "pmil/mil.hpp"
#include "pmil/vit.hpp"

namespace pmil {

// Self-describing container: a config text block plus named parameter
// tensors (shape, little-endian f32 data, frozen/trainable flag).
struct CheckpointTensor {
  std::string name;
  bool trainable = false;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_ini;
  std::vector<CheckpointTensor> tensors;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint snapshot_params(const std::string& config_ini, const PromptVit& model,
                           const MILHead& head);
// Restores by name into an already-constructed model/head; shape-checked.
void restore_params(const Checkpoint& ckpt, PromptVit& model, MILHead& head);

}  // namespace pmil
