#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mfvit/augment.hpp"
#include "mfvit/checkpoint.hpp"
#include "mfvit/vit.hpp"

namespace mfvit::fusion {

// Per-head projections W_q, W_k, W_v, each [C, C/h].
struct CrossAttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::vector<ad::Tensor> wq, wk, wv;

  // Uniform in +-1/sqrt(C).
  static CrossAttentionParams uniform(std::size_t dim, std::size_t heads, Rng& rng);
  static CrossAttentionParams zeros(std::size_t dim, std::size_t heads);
  std::size_t head_dim() const { return dim / heads; }
  void collect(const std::string& prefix, std::vector<ad::NamedTensor>& out) const;
};

struct CrossAttentionTrace {
  std::vector<ad::Tensor> weights;  // one [1, P+1] row per head
};

// The CLS token of branch a queries [cls_a ; patches_b]; per-head outputs
// are concatenated back to width C. Returns [1, C].
ad::Tensor cross_attend(const ad::Tensor& cls_a, const ad::Tensor& patches_b, const CrossAttentionParams& params,
                        CrossAttentionTrace* trace = nullptr);

struct CaBlock {
  CrossAttentionParams cxr;  // CXR CLS attends to Enh patches
  CrossAttentionParams enh;  // Enh CLS attends to CXR patches
};

// y_cls = x_cls + CA, output [y_cls ; x_patch] for each branch. Token
// matrices stack `batch` images along rows.
std::pair<vit::TokenMatrix, vit::TokenMatrix> ca_block_forward(const vit::TokenMatrix& tokens_cxr,
                                                               const vit::TokenMatrix& tokens_enh,
                                                               const CaBlock& block, std::size_t batch = 1);

// (1/3) [CE(Z_s, y) + CE(Z_s, argmax Z_t_cxr) + CE(Z_s, argmax Z_t_enh)].
// Teacher logits only contribute their argmax labels.
ad::Tensor hard_distill_loss(const ad::Tensor& student_logits, const ad::Tensor& teacher_cxr_logits,
                             const ad::Tensor& teacher_enh_logits, std::span<const int> labels);

std::vector<int> argmax_rows(const ad::Tensor& logits);

enum class FusionMode { ca, lp };

FusionMode parse_fusion_mode(const std::string& s);
std::string fusion_mode_name(FusionMode m);

class FusionModel {
 public:
  FusionModel(const vit::VitConfig& cfg, FusionMode mode, std::uint64_t seed);

  FusionMode mode() const { return mode_; }
  const vit::VitConfig& config() const { return cfg_; }
  vit::VitEncoder& cxr_branch() { return cxr_; }
  vit::VitEncoder& enh_branch() { return enh_; }
  const vit::VitEncoder& cxr_branch() const { return cxr_; }
  const vit::VitEncoder& enh_branch() const { return enh_; }
  CaBlock& ca() { return ca_; }
  ad::Linear& head_cxr() { return head_cxr_; }
  ad::Linear& head_enh() { return head_enh_; }

  // Loads encoder.* from each checkpoint (missing tensors -> ConfigError)
  // and, when present, head.* as the initial branch heads.
  void load_branches(const ad::Checkpoint& cxr, const ad::Checkpoint& enh);
  std::uint64_t cxr_fingerprint() const;
  std::uint64_t enh_fingerprint() const;

  ad::Tensor logits_from_tokens(const vit::TokenMatrix& tokens_cxr, const vit::TokenMatrix& tokens_enh,
                                std::size_t batch) const;
  ad::Tensor logits(std::span<const imgproc::Image2D> cxr, std::span<const imgproc::Image2D> enh) const;

  // CA mode: fusion.ca.* and both heads; LP mode: both heads.
  std::vector<ad::NamedTensor> trainable_parameters() const;
  std::vector<ad::NamedTensor> branch_parameters() const;
  void set_branches_trainable(bool on);

  // Fusion parameters plus branch fingerprints in the sidecar metadata.
  ad::Checkpoint to_checkpoint() const;
  // Restores fusion parameters; the loaded branches must match the stored
  // fingerprints (ValidationError otherwise).
  void load_checkpoint(const ad::Checkpoint& ckpt);

 private:
  vit::VitConfig cfg_;
  FusionMode mode_;
  Rng init_rng_;
  vit::VitEncoder cxr_;
  vit::VitEncoder enh_;
  CaBlock ca_;
  ad::Linear head_cxr_;
  ad::Linear head_enh_;
};

// Single-branch fine-tuned classifiers used as distillation teachers.
struct Teachers {
  const vit::VitClassifier* cxr = nullptr;
  const vit::VitClassifier* enh = nullptr;
};

struct FusionTrainConfig {
  int epochs = 90;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool augment = true;
  bool unfreeze_branches = false;
  imgproc::AugmentConfig augment_cfg;
};

struct FusionTrainResult {
  ad::Checkpoint checkpoint;
  std::vector<double> epoch_loss;
};

// CA mode trains the CA block and heads with hard_distill_loss against the
// teachers; LP mode trains the two heads with plain cross-entropy.
FusionTrainResult train_fusion(FusionModel& model, std::span<const imgproc::Image2D> cxr,
                               std::span<const imgproc::Image2D> enh, std::span<const int> labels,
                               const FusionTrainConfig& cfg, const Teachers& teachers, std::uint64_t seed);

std::uint64_t parameter_fingerprint(const std::vector<ad::NamedTensor>& params);

}  // namespace mfvit::fusion
