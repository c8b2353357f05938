#include "pmil/vit.hpp"

#include <cmath>

#include "pmil/ops.hpp"
#include "pmil/rng.hpp"

namespace pmil {

void ViTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || channels <= 0)
    throw ShapeError("vit config: sizes must be positive");
  if (image_size % patch_size != 0)
    throw ShapeError("vit config: image_size " + std::to_string(image_size) +
                     " not divisible by patch_size " + std::to_string(patch_size));
  if (embed_dim % num_heads != 0)
    throw ShapeError("vit config: embed_dim " + std::to_string(embed_dim) +
                     " not divisible by num_heads " + std::to_string(num_heads));
  if (num_prompts < 0) throw ShapeError("vit config: num_prompts must be >= 0");
  if (num_layers < 1) throw ShapeError("vit config: num_layers must be >= 1");
  if (mlp_hidden() < 1) throw ShapeError("vit config: mlp_ratio too small");
}

Tensor patchify(const Tensor& image_hwc, int patch_size) {
  if (image_hwc.rank() != 3)
    throw ShapeError("patchify: expected [H, W, C] image, got " +
                     shape_str(image_hwc.shape()));
  const std::int64_t H = image_hwc.dim(0), W = image_hwc.dim(1), C = image_hwc.dim(2);
  if (H % patch_size != 0 || W % patch_size != 0)
    throw ShapeError("patchify: image " + shape_str(image_hwc.shape()) +
                     " not divisible by patch_size " + std::to_string(patch_size));
  const std::int64_t ph = H / patch_size, pw = W / patch_size;
  const std::int64_t pd = static_cast<std::int64_t>(patch_size) * patch_size * C;
  Tensor out = Tensor::zeros({ph * pw, pd}, image_hwc.dtype());
  for (std::int64_t pr = 0; pr < ph; ++pr) {
    for (std::int64_t pc = 0; pc < pw; ++pc) {
      const std::int64_t row = pr * pw + pc;
      std::int64_t k = 0;
      for (std::int64_t y = 0; y < patch_size; ++y) {
        for (std::int64_t x = 0; x < patch_size; ++x) {
          for (std::int64_t c = 0; c < C; ++c) {
            const std::int64_t src = ((pr * patch_size + y) * W + (pc * patch_size + x)) * C + c;
            out.set_value_at(row * pd + k, image_hwc.value_at(src));
            ++k;
          }
        }
      }
    }
  }
  out.set_persistent(true);
  return out;
}

PromptVit::PromptVit(const ViTConfig& cfg, std::uint64_t seed, DType dtype)
    : cfg_(cfg), dtype_(dtype) {
  cfg_.validate();
  init_params(seed);
}

namespace {

Tensor xavier(const Shape& shape, Rng& rng, DType dt) {
  const double std = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
  Tensor t = randn(shape, rng, std, dt);
  t.set_persistent(true);
  return t;
}

Tensor zeros_param(const Shape& shape, DType dt) {
  Tensor t = Tensor::zeros(shape, dt);
  t.set_persistent(true);
  return t;
}

Tensor ones_param(const Shape& shape, DType dt) {
  Tensor t = Tensor::full(shape, 1.0, dt);
  t.set_persistent(true);
  return t;
}

Tensor token_param(const Shape& shape, Rng& rng, DType dt) {
  Tensor t = randn(shape, rng, 0.02, dt);
  t.set_persistent(true);
  return t;
}

}  // namespace

void PromptVit::init_params(std::uint64_t seed) {
  const int d = cfg_.embed_dim;
  const int w = cfg_.num_patches();
  const int hidden = cfg_.mlp_hidden();

  Rng backbone_rng(derive_seed(seed, seed_tag::kBackbone));
  patch_embed_w_ = xavier({cfg_.patch_dim(), d}, backbone_rng, dtype_);
  patch_embed_b_ = zeros_param({1, d}, dtype_);
  pos_embed_ = token_param({w + 1, d}, backbone_rng, dtype_);
  cls_token_ = token_param({1, d}, backbone_rng, dtype_);

  layers_.resize(static_cast<std::size_t>(cfg_.num_layers));
  for (EncoderLayerParams& L : layers_) {
    L.ln1_gamma = ones_param({1, d}, dtype_);
    L.ln1_beta = zeros_param({1, d}, dtype_);
    L.wq = xavier({d, d}, backbone_rng, dtype_);
    L.bq = zeros_param({1, d}, dtype_);
    L.wk = xavier({d, d}, backbone_rng, dtype_);
    L.bk = zeros_param({1, d}, dtype_);
    L.wv = xavier({d, d}, backbone_rng, dtype_);
    L.bv = zeros_param({1, d}, dtype_);
    L.wo = xavier({d, d}, backbone_rng, dtype_);
    L.bo = zeros_param({1, d}, dtype_);
    L.ln2_gamma = ones_param({1, d}, dtype_);
    L.ln2_beta = zeros_param({1, d}, dtype_);
    L.fc1_w = xavier({d, hidden}, backbone_rng, dtype_);
    L.fc1_b = zeros_param({1, hidden}, dtype_);
    L.fc2_w = xavier({hidden, d}, backbone_rng, dtype_);
    L.fc2_b = zeros_param({1, d}, dtype_);
  }
  final_gamma_ = ones_param({1, d}, dtype_);
  final_beta_ = zeros_param({1, d}, dtype_);

  // own stream: adding/removing prompt tokens must not shift backbone init
  Rng prompt_rng(derive_seed(seed, seed_tag::kPrompt));
  if (cfg_.num_prompts > 0) {
    prompt_ = token_param({cfg_.num_prompts, d}, prompt_rng, dtype_);
    prompt_.set_requires_grad(true);
  } else {
    prompt_ = zeros_param({0, d}, dtype_);
  }
}

Tensor PromptVit::embed(const Tensor& patches) const {
  if (patches.rank() != 2 || patches.cols() != cfg_.patch_dim())
    throw ShapeError("embed: expected [w, " + std::to_string(cfg_.patch_dim()) +
                     "] patches, got " + shape_str(patches.shape()));
  if (patches.rows() != cfg_.num_patches())
    throw ShapeError("embed: expected " + std::to_string(cfg_.num_patches()) +
                     " patches, got " + std::to_string(patches.rows()));
  Tensor tokens = linear(patches, patch_embed_w_, patch_embed_b_);
  return add(tokens, slice_rows(pos_embed_, 0, cfg_.num_patches()));
}

Tensor PromptVit::assemble_sequence(const Tensor& tokens) const {
  if (tokens.cols() != cfg_.embed_dim)
    throw ShapeError("assemble_sequence: token dim " + std::to_string(tokens.cols()) +
                     " does not match embed_dim " + std::to_string(cfg_.embed_dim));
  // [T_z, P, t_cls]; the class token takes the last positional row, prompt
  // tokens take none
  Tensor cls = add(cls_token_, slice_rows(pos_embed_, cfg_.num_patches(), 1));
  std::vector<Tensor> parts;
  parts.push_back(tokens);
  if (cfg_.num_prompts > 0) parts.push_back(prompt_);
  parts.push_back(cls);
  return concat_rows(parts);
}

Tensor PromptVit::encoder_layer(const Tensor& seq, const EncoderLayerParams& L,
                                std::vector<Tensor>* attn_probe) const {
  const int d = cfg_.embed_dim;
  const int heads = cfg_.num_heads;
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor x = layernorm(seq, L.ln1_gamma, L.ln1_beta);
  Tensor q = linear(x, L.wq, L.bq);
  Tensor k = linear(x, L.wk, L.bk);
  Tensor v = linear(x, L.wv, L.bv);

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    Tensor attn = softmax(logits);
    if (attn_probe) attn_probe->push_back(attn.detached().clone());
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor ctx = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  Tensor attn_out = linear(ctx, L.wo, L.bo);
  Tensor res1 = add(seq, attn_out);

  Tensor m = layernorm(res1, L.ln2_gamma, L.ln2_beta);
  m = linear(m, L.fc1_w, L.fc1_b);
  m = gelu(m);
  m = linear(m, L.fc2_w, L.fc2_b);
  return add(res1, m);
}

Tensor PromptVit::forward_instance(const Tensor& patches) const {
  Tensor seq = assemble_sequence(embed(patches));
  for (const EncoderLayerParams& L : layers_) seq = encoder_layer(seq, L);
  Tensor normed = layernorm(seq, final_gamma_, final_beta_);
  // class token sits at row w + k
  return slice_rows(normed, cfg_.num_patches() + cfg_.num_prompts, 1);
}

Tensor PromptVit::forward_features(const std::vector<Tensor>& instance_patches) const {
  if (instance_patches.empty())
    throw ShapeError("forward_features: empty bag");
  std::vector<Tensor> rows;
  rows.reserve(instance_patches.size());
  for (const Tensor& p : instance_patches) rows.push_back(forward_instance(p));
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

std::vector<NamedParam> PromptVit::backbone_params() const {
  std::vector<NamedParam> out;
  out.push_back({"backbone.patch_embed.w", patch_embed_w_});
  out.push_back({"backbone.patch_embed.b", patch_embed_b_});
  out.push_back({"backbone.pos_embed", pos_embed_});
  out.push_back({"backbone.cls_token", cls_token_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const EncoderLayerParams& L = layers_[i];
    const std::string p = "backbone.layer" + std::to_string(i) + ".";
    out.push_back({p + "ln1.gamma", L.ln1_gamma});
    out.push_back({p + "ln1.beta", L.ln1_beta});
    out.push_back({p + "attn.wq", L.wq});
    out.push_back({p + "attn.bq", L.bq});
    out.push_back({p + "attn.wk", L.wk});
    out.push_back({p + "attn.bk", L.bk});
    out.push_back({p + "attn.wv", L.wv});
    out.push_back({p + "attn.bv", L.bv});
    out.push_back({p + "attn.wo", L.wo});
    out.push_back({p + "attn.bo", L.bo});
    out.push_back({p + "ln2.gamma", L.ln2_gamma});
    out.push_back({p + "ln2.beta", L.ln2_beta});
    out.push_back({p + "mlp.fc1.w", L.fc1_w});
    out.push_back({p + "mlp.fc1.b", L.fc1_b});
    out.push_back({p + "mlp.fc2.w", L.fc2_w});
    out.push_back({p + "mlp.fc2.b", L.fc2_b});
  }
  out.push_back({"backbone.final_norm.gamma", final_gamma_});
  out.push_back({"backbone.final_norm.beta", final_beta_});
  return out;
}

std::vector<NamedParam> PromptVit::prompt_params() const {
  if (cfg_.num_prompts == 0) return {};
  return {{"prompt.tokens", prompt_}};
}

std::vector<NamedParam> PromptVit::trainable_params() const {
  std::vector<NamedParam> out = prompt_params();
  if (backbone_trainable_) {
    for (NamedParam& p : backbone_params()) out.push_back(p);
  }
  return out;
}

void PromptVit::set_backbone_trainable(bool v) {
  // requires_grad lives on the tensor handle, so flip it on the stored members
  backbone_trainable_ = v;
  patch_embed_w_.set_requires_grad(v);
  patch_embed_b_.set_requires_grad(v);
  pos_embed_.set_requires_grad(v);
  cls_token_.set_requires_grad(v);
  for (EncoderLayerParams& L : layers_) {
    L.ln1_gamma.set_requires_grad(v);
    L.ln1_beta.set_requires_grad(v);
    L.wq.set_requires_grad(v);
    L.bq.set_requires_grad(v);
    L.wk.set_requires_grad(v);
    L.bk.set_requires_grad(v);
    L.wv.set_requires_grad(v);
    L.bv.set_requires_grad(v);
    L.wo.set_requires_grad(v);
    L.bo.set_requires_grad(v);
    L.ln2_gamma.set_requires_grad(v);
    L.ln2_beta.set_requires_grad(v);
    L.fc1_w.set_requires_grad(v);
    L.fc1_b.set_requires_grad(v);
    L.fc2_w.set_requires_grad(v);
    L.fc2_b.set_requires_grad(v);
  }
  final_gamma_.set_requires_grad(v);
  final_beta_.set_requires_grad(v);
}

std::int64_t PromptVit::prompt_param_count() const { return prompt_.numel(); }

std::int64_t PromptVit::backbone_param_count() const {
  std::int64_t n = 0;
  for (const NamedParam& p : backbone_params()) n += p.tensor.numel();
  return n;
}

std::uint64_t PromptVit::backbone_checksum() const {
  // FNV-1a over the raw little-endian bytes of every backbone buffer
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const NamedParam& p : backbone_params()) {
    const Tensor& t = p.tensor;
    if (t.dtype() == DType::F64) {
      auto s = t.data<double>();
      mix(reinterpret_cast<const unsigned char*>(s.data()), s.size() * sizeof(double));
    } else {
      auto s = t.data<float>();
      mix(reinterpret_cast<const unsigned char*>(s.data()), s.size() * sizeof(float));
    }
  }
  return h;
}

}  // namespace pmil
