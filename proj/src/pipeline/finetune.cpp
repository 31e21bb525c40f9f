#include "mfvit/finetune.hpp"

#include <cmath>
#include <numeric>

#include "mfvit/error.hpp"
#include "mfvit/optim.hpp"
#include "mfvit/schedule.hpp"

namespace mfvit::pipeline {

using ad::Tensor;

namespace {

constexpr std::size_t kInferenceChunk = 32;

std::vector<imgproc::Image2D> prepare_all(std::span<const imgproc::Image2D> images, int size) {
  std::vector<imgproc::Image2D> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(prepare_input(img, size));
  return out;
}

Tensor gather_rows(const Tensor& features, std::span<const std::size_t> idx) {
  const std::size_t c = features.cols();
  std::vector<double> v(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(features.data().begin() + idx[i] * c, c, v.begin() + i * c);
  }
  return Tensor::from({idx.size(), c}, std::move(v));
}

}  // namespace

imgproc::Image2D prepare_input(const imgproc::Image2D& image, int size) {
  if (image.width() == size && image.height() == size) return image;
  return imgproc::resize_bilinear(image, size, size);
}

FinetuneResult finetune(vit::VitClassifier& model, std::span<const imgproc::Image2D> images,
                        std::span<const int> labels, const FinetuneConfig& cfg, std::uint64_t seed) {
  if (images.size() != labels.size()) throw DimensionError("finetune: image and label counts differ");
  if (images.empty()) throw ConfigError("finetune: empty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("finetune: epochs and batch_size must be >= 1");
  const int size = model.encoder().config().image_size;
  const bool lp = cfg.protocol == vit::Protocol::linear_probe;

  Rng head_rng(mix_seed(seed, 21));
  auto params = vit::apply_freeze_policy(model, cfg.protocol, head_rng);
  ad::OptimizerConfig ocfg;
  ocfg.kind = ad::OptimizerKind::sgd_momentum;
  ocfg.momentum = cfg.momentum;
  ocfg.weight_decay = cfg.weight_decay;
  ad::Optimizer opt(ocfg, params);

  ad::LrSchedule sched;
  sched.kind = ad::ScheduleKind::cosine_annealing;
  sched.total_epochs = cfg.epochs;
  sched.base_lr = cfg.lr;

  Tensor cached;
  std::vector<imgproc::Image2D> prepared;
  if (lp) {
    ad::NoGradGuard guard;
    prepared = prepare_all(images, size);
    std::vector<Tensor> chunks;
    for (std::size_t i = 0; i < prepared.size(); i += kInferenceChunk) {
      const std::size_t e = std::min(prepared.size(), i + kInferenceChunk);
      chunks.push_back(model.encoder().encode_cls(std::span(prepared).subspan(i, e - i)));
    }
    cached = ad::concat_rows(chunks);
  } else if (!cfg.augment) {
    prepared = prepare_all(images, size);
  }

  const std::size_t n = images.size();
  const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t num_batches = (n + bs - 1) / bs;
  Rng shuffle_rng(mix_seed(seed, 22));
  const std::uint64_t aug_seed = mix_seed(seed, 23);
  std::uint64_t sample_counter = 0;
  imgproc::AugmentConfig aug = cfg.augment_cfg;
  aug.resize_to = size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  FinetuneResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b) {
      const std::size_t begin = b * bs, end = std::min(n, begin + bs);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      std::vector<int> y;
      for (auto i : idx) y.push_back(labels[i]);
      Tensor logits;
      if (lp) {
        logits = model.logits_from_cls(gather_rows(cached, idx));
      } else {
        std::vector<imgproc::Image2D> batch;
        for (auto i : idx) {
          batch.push_back(cfg.augment ? imgproc::augment(images[i], mix_seed(aug_seed, sample_counter++), aug)
                                      : prepared[i]);
        }
        logits = model.logits(batch);
      }
      const Tensor loss = ad::cross_entropy(logits, y);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw NumericError("finetune: non-finite loss in epoch " + std::to_string(epoch + 1));
      opt.zero_grad();
      loss.backward();
      opt.step(ad::lr_at(sched, epoch + static_cast<double>(b) / num_batches));
      loss_sum += lv * static_cast<double>(end - begin);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  result.checkpoint = classifier_checkpoint(model);
  result.checkpoint.meta = {{"stage", "finetune"},
                            {"protocol", vit::protocol_name(cfg.protocol)},
                            {"epochs", cfg.epochs},
                            {"seed", seed},
                            {"train_size", n}};
  return result;
}

std::vector<int> predict(const vit::VitClassifier& model, std::span<const imgproc::Image2D> images) {
  ad::NoGradGuard guard;
  const int size = model.encoder().config().image_size;
  std::vector<int> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); i += kInferenceChunk) {
    const std::size_t e = std::min(images.size(), i + kInferenceChunk);
    const auto batch = prepare_all(images.subspan(i, e - i), size);
    for (int p : fusion::argmax_rows(model.logits(batch))) out.push_back(p);
  }
  return out;
}

std::vector<int> predict(const fusion::FusionModel& model, std::span<const imgproc::Image2D> cxr,
                         std::span<const imgproc::Image2D> enh) {
  if (cxr.size() != enh.size()) throw DimensionError("predict: branch image counts differ");
  ad::NoGradGuard guard;
  const int size = model.config().image_size;
  std::vector<int> out;
  out.reserve(cxr.size());
  for (std::size_t i = 0; i < cxr.size(); i += kInferenceChunk) {
    const std::size_t e = std::min(cxr.size(), i + kInferenceChunk);
    const auto bc = prepare_all(cxr.subspan(i, e - i), size);
    const auto be = prepare_all(enh.subspan(i, e - i), size);
    for (int p : fusion::argmax_rows(model.logits(bc, be))) out.push_back(p);
  }
  return out;
}

ad::Checkpoint classifier_checkpoint(const vit::VitClassifier& model) {
  ad::Checkpoint ckpt;
  ckpt.add_all(model.parameters());
  return ckpt;
}

void load_classifier(vit::VitClassifier& model, const ad::Checkpoint& ckpt) { ckpt.load_into(model.parameters()); }

}  // namespace mfvit::pipeline
