#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "mfvit/augment.hpp"
#include "mfvit/checkpoint.hpp"
#include "json.hpp"
#include "mfvit/vit.hpp"

namespace mfvit::ssl {

struct MocoConfig {
  double tau = 0.2;
  std::size_t queue_size = 4096;
  std::size_t proj_hidden = 4096;
  std::size_t proj_out = 256;
  std::size_t pred_hidden = 4096;
  double m_start = 0.9;
  double m_end = 0.999;
  int epochs = 300;
  int warmup_epochs = 40;
  int batch_size = 16;
  double lr = 1.5e-4;  // scaled by batch_size / 4
  double weight_decay = 0.1;

  static MocoConfig toy();
  void validate() const;
};

void to_json(nlohmann::json& j, const MocoConfig& c);
void from_json(const nlohmann::json& j, MocoConfig& c);

// Fixed-capacity FIFO of unit-norm key representations.
class RepresentationQueue {
 public:
  RepresentationQueue(std::size_t capacity, std::size_t dim);

  // keys: [b, dim] with unit rows; the oldest entries are overwritten once
  // the queue is full.
  void enqueue(const ad::Tensor& keys);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return size_ == 0; }
  std::span<const double> row(std::size_t i) const;
  // [size, dim] constant tensor of the stored rows in slot order.
  ad::Tensor as_tensor() const;

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::vector<double> storage_;
};

// Two independent augmentations with sub-seeds derived from `seed`.
std::pair<imgproc::Image2D, imgproc::Image2D> two_view(const imgproc::Image2D& image, std::uint64_t seed,
                                                       const imgproc::AugmentConfig& cfg);

// Batch-mean InfoNCE: row i of r_q is scored against r_k row i (positive)
// and every queue row (negatives). Inputs must be unit rows (1e-3).
ad::Tensor info_nce(const ad::Tensor& r_q, const ad::Tensor& r_k, const RepresentationQueue& queue, double tau);
// Same loss with an explicit [K, d] negative set.
ad::Tensor info_nce(const ad::Tensor& r_q, const ad::Tensor& r_k, const ad::Tensor& negatives, double tau);
// Negatives are the other rows of r_k (used while the queue is still empty).
ad::Tensor info_nce_in_batch(const ad::Tensor& r_q, const ad::Tensor& r_k, double tau);

// m(t) = m_end - (m_end - m_start) * (1 + cos(pi t)) / 2 for t in [0, 1].
double momentum_at(double t, const MocoConfig& cfg);

// theta_k <- m * theta_k + (1 - m) * theta_q, matched by position.
void momentum_update(const std::vector<ad::NamedTensor>& query_params,
                     const std::vector<ad::NamedTensor>& key_params, double m);

// Linear layers with BatchNorm + ReLU between them (none after the last).
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(const std::vector<std::size_t>& dims, Rng& rng);

  ad::Tensor forward(const ad::Tensor& x, ad::Mode mode);
  std::vector<ad::NamedTensor> parameters(const std::string& prefix) const;
  std::vector<ad::NamedTensor> buffers(const std::string& prefix) const;
  void load_buffers(const ad::Checkpoint& ckpt, const std::string& prefix);
  void set_requires_grad(bool on);

 private:
  std::vector<ad::Linear> layers_;
  std::vector<ad::BatchNorm1d> norms_;
};

// Query path: encoder -> 3-layer projection -> 2-layer prediction.
// Key path: momentum encoder -> 3-layer projection, never differentiated.
class MocoModel {
 public:
  MocoModel(const vit::VitConfig& vit_cfg, const MocoConfig& cfg, std::uint64_t seed);

  vit::VitEncoder& query_encoder() { return query_encoder_; }
  const vit::VitEncoder& query_encoder() const { return query_encoder_; }
  const vit::VitEncoder& key_encoder() const { return key_encoder_; }

  // L2-normalized [b, proj_out] representations.
  ad::Tensor query_repr(std::span<const imgproc::Image2D> images);
  ad::Tensor key_repr(std::span<const imgproc::Image2D> images);

  // Trainable set: encoder.*, proj.*, pred.*
  std::vector<ad::NamedTensor> query_parameters() const;
  // Query encoder + projection, positionally aligned with key_parameters().
  std::vector<ad::NamedTensor> query_momentum_source() const;
  // key.encoder.*, key.proj.*
  std::vector<ad::NamedTensor> key_parameters() const;

  // Query encoder and heads (parameters and BN buffers).
  ad::Checkpoint to_checkpoint() const;

 private:
  MocoConfig cfg_;
  Rng init_rng_;
  vit::VitEncoder query_encoder_;
  MlpHead query_proj_;
  MlpHead query_pred_;
  vit::VitEncoder key_encoder_;
  MlpHead key_proj_;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double momentum = 0.0;
};

struct PretrainOptions {
  std::uint64_t seed = 0;
  imgproc::AugmentConfig augment;
  std::filesystem::path log_csv;          // appended when set
  std::filesystem::path checkpoint_path;  // final checkpoint when set
  int checkpoint_every = 0;               // periodic <path>.epoch<N> snapshots
};

struct PretrainResult {
  ad::Checkpoint checkpoint;
  std::vector<EpochLog> log;
  std::size_t queue_rows = 0;
  std::int64_t steps = 0;
};

PretrainResult pretrain(MocoModel& model, std::span<const imgproc::Image2D> images, const MocoConfig& cfg,
                        const PretrainOptions& opts);

}  // namespace mfvit::ssl
