#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pmil/optim.hpp"
#include "pmil/tensor.hpp"

namespace pmil {

struct ViTConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int embed_dim = 64;
  int num_layers = 4;
  int num_heads = 4;
  double mlp_ratio = 2.0;
  int num_prompts = 1;  // k trainable prompt tokens

  void validate() const;
  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }  // w
  int patch_dim() const { return patch_size * patch_size * channels; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
  int seq_len() const { return num_patches() + num_prompts + 1; }

  bool operator==(const ViTConfig&) const = default;
};

// Splits an [H, W, C] image into non-overlapping patch_size x patch_size
// patches, row-major, each flattened to patch_size^2 * C values. The result
// is marked persistent (input data, not an activation).
Tensor patchify(const Tensor& image_hwc, int patch_size);

// Instance features with an optional retained gradient of the same shape.
struct FeatureMatrix {
  Tensor h;  // [n, d]
  Tensor g;  // [n, d] when retained, undefined otherwise
};

struct EncoderLayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

struct ParamCensus {
  std::int64_t prompt = 0;
  std::int64_t head = 0;
  std::int64_t backbone = 0;
  bool backbone_trainable = false;
};

// Pre-norm ViT encoder over the token layout [patch tokens, prompt tokens,
// class token]. Patch and class tokens receive learned positional
// embeddings; prompt tokens receive none. The instance feature is the class
// token after the final layer norm.
class PromptVit {
 public:
  PromptVit(const ViTConfig& cfg, std::uint64_t seed, DType dtype = DType::F64);

  const ViTConfig& config() const { return cfg_; }
  DType dtype() const { return dtype_; }

  // [w, patch_dim] patch matrix -> [w, d] embedded tokens
  Tensor embed(const Tensor& patches) const;
  // layer-0 sequence [T_z, P, t_cls]; prompt omitted when k = 0
  Tensor assemble_sequence(const Tensor& tokens) const;
  // one pre-norm transformer block; when `attn_probe` is non-null it receives
  // the per-head attention matrices of this layer
  Tensor encoder_layer(const Tensor& seq, const EncoderLayerParams& layer,
                       std::vector<Tensor>* attn_probe = nullptr) const;
  // full per-instance forward: [w, patch_dim] -> [1, d]
  Tensor forward_instance(const Tensor& patches) const;
  // bag forward under the caller's graph scope: n instances -> [n, d]
  Tensor forward_features(const std::vector<Tensor>& instance_patches) const;

  Tensor& prompt_tokens() { return prompt_; }
  const Tensor& prompt_tokens() const { return prompt_; }

  // Handles share the parameter buffers, so optimizer updates through them
  // mutate the model.
  std::vector<NamedParam> backbone_params() const;  // everything except the prompt
  std::vector<NamedParam> prompt_params() const;    // empty when k = 0
  std::vector<NamedParam> trainable_params() const;

  void set_backbone_trainable(bool v);
  bool backbone_trainable() const { return backbone_trainable_; }

  std::int64_t prompt_param_count() const;
  std::int64_t backbone_param_count() const;
  std::uint64_t backbone_checksum() const;

 private:
  void init_params(std::uint64_t seed);

  ViTConfig cfg_;
  DType dtype_;
  bool backbone_trainable_ = false;

  Tensor patch_embed_w_, patch_embed_b_;
  Tensor pos_embed_;  // [w + 1, d]: patch positions then class position
  Tensor cls_token_;  // [1, d]
  Tensor prompt_;     // [k, d]
  std::vector<EncoderLayerParams> layers_;
  Tensor final_gamma_, final_beta_;
};

}  // namespace pmil
