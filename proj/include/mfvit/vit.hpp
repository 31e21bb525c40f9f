#pragma once

#include <span>
#include <string>
#include <vector>

#include "mfvit/checkpoint.hpp"
#include "mfvit/image.hpp"
#include "mfvit/nn.hpp"

namespace mfvit::vit {

struct VitConfig {
  int image_size = 224;
  int patch_size = 16;
  int embed_dim = 384;
  int depth = 12;
  int num_heads = 6;
  double mlp_ratio = 4.0;
  int num_classes = 3;
  bool use_pos_embed = true;

  static VitConfig vit_small();
  static VitConfig toy();

  void validate() const;
  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int num_tokens() const { return 1 + num_patches(); }
  int head_dim() const { return embed_dim / num_heads; }
  int mlp_hidden() const { return static_cast<int>(mlp_ratio * embed_dim); }
};

// (num_tokens x embed_dim) activations; row 0 is the CLS token. Batches
// stack images along rows: image b occupies rows [b*N, (b+1)*N).
using TokenMatrix = ad::Tensor;

// Fixed 2-D sine-cosine table of shape (grid*grid) x dim. The first dim/2
// channels encode the patch row, the second dim/2 the column; within each
// half channel 2i is sin(pos * w_i) and 2i+1 is cos(pos * w_i) with
// w_i = 10000^(-i / (dim/4)).
ad::Tensor sincos_pos_embed(int grid, int dim);

struct EncoderBlock {
  ad::LayerNormParams ln1;
  ad::Linear wq, wk, wv, proj;
  ad::LayerNormParams ln2;
  ad::Linear fc1, fc2;
};

// Attention probabilities captured during a forward pass, one
// (N x N) matrix per (block, image, head).
struct AttentionTrace {
  std::vector<ad::Tensor> weights;
};

// Pre-norm ViT encoder over single-channel images.
class VitEncoder {
 public:
  VitEncoder(VitConfig cfg, Rng& rng);

  const VitConfig& config() const { return cfg_; }

  // Flattens non-overlapping patches (row-major), projects them, prepends the
  // CLS token and adds the positional table (CLS position is all-zero).
  TokenMatrix patchify_embed(const imgproc::Image2D& image) const;
  TokenMatrix patchify_embed(std::span<const imgproc::Image2D> images) const;

  // depth x [LN -> MHSA -> residual, LN -> MLP(GELU) -> residual] -> LN.
  // `batch` images stacked along rows. Shape is preserved.
  TokenMatrix forward(const TokenMatrix& tokens, std::size_t batch, AttentionTrace* trace = nullptr) const;

  // patchify_embed + forward; returns the CLS rows as [batch, embed_dim].
  ad::Tensor encode_cls(std::span<const imgproc::Image2D> images) const;
  ad::Tensor cls_rows(const TokenMatrix& tokens, std::size_t batch) const;

  // Canonical names: encoder.patch_embed.*, encoder.cls_token,
  // encoder.block{i}.{ln1,attn.wq,attn.wk,attn.wv,attn.proj,ln2,mlp.fc1,mlp.fc2}.*,
  // encoder.norm.*
  std::vector<ad::NamedTensor> parameters() const;
  void set_requires_grad(bool on);

 private:
  VitConfig cfg_;
  ad::Linear patch_embed_;
  ad::Tensor cls_token_;
  ad::Tensor pos_embed_;  // [num_tokens, dim], row 0 zero
  std::vector<EncoderBlock> blocks_;
  ad::LayerNormParams norm_;
};

enum class Protocol { linear_probe, fine_tune };

Protocol parse_protocol(const std::string& s);
std::string protocol_name(Protocol p);

// Encoder + linear classifier on the final CLS token.
class VitClassifier {
 public:
  VitClassifier(VitConfig cfg, Rng& rng);

  VitEncoder& encoder() { return encoder_; }
  const VitEncoder& encoder() const { return encoder_; }
  const ad::Linear& head() const { return head_; }
  ad::Linear& head() { return head_; }

  ad::Tensor logits(std::span<const imgproc::Image2D> images) const;
  ad::Tensor logits_from_cls(const ad::Tensor& cls) const { return head_.forward(cls); }

  // Encoder names followed by head.weight / head.bias.
  std::vector<ad::NamedTensor> parameters() const;
  void reinit_head(Rng& rng);

 private:
  VitEncoder encoder_;
  ad::Linear head_;
};

// LP: re-initializes the head (uniform +-1/sqrt(fan_in)), freezes the
// encoder and returns the head parameters. FT: everything trainable.
std::vector<ad::NamedTensor> apply_freeze_policy(VitClassifier& model, Protocol protocol, Rng& rng);

// Loads encoder.* tensors from a checkpoint into the encoder.
void load_encoder(VitEncoder& encoder, const ad::Checkpoint& ckpt);

}  // namespace mfvit::vit
