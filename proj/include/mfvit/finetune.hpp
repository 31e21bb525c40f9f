#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfvit/augment.hpp"
#include "mfvit/fusion.hpp"
#include "mfvit/vit.hpp"
#include "json.hpp"

namespace mfvit::pipeline {

struct FinetuneConfig {
  vit::Protocol protocol = vit::Protocol::fine_tune;
  int epochs = 90;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  // FT only; LP trains on cached features of the unaugmented inputs.
  bool augment = true;
  imgproc::AugmentConfig augment_cfg;
};

struct FinetuneResult {
  ad::Checkpoint checkpoint;  // encoder.* and head.*
  std::vector<double> epoch_loss;
};

// SGD with momentum under cosine annealing. The freeze policy of the
// protocol is applied first (LP re-initializes the head).
FinetuneResult finetune(vit::VitClassifier& model, std::span<const imgproc::Image2D> images,
                        std::span<const int> labels, const FinetuneConfig& cfg, std::uint64_t seed);

// Bilinear resize to the network input size (no-op when already sized).
imgproc::Image2D prepare_input(const imgproc::Image2D& image, int size);

// Gradient-free inference in fixed-size chunks, preserving input order.
std::vector<int> predict(const vit::VitClassifier& model, std::span<const imgproc::Image2D> images);
std::vector<int> predict(const fusion::FusionModel& model, std::span<const imgproc::Image2D> cxr,
                         std::span<const imgproc::Image2D> enh);

ad::Checkpoint classifier_checkpoint(const vit::VitClassifier& model);
void load_classifier(vit::VitClassifier& model, const ad::Checkpoint& ckpt);

}  // namespace mfvit::pipeline
