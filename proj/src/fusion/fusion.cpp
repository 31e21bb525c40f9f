#include "mfvit/fusion.hpp"

#include <cmath>
#include <numeric>
#include <optional>

#include "mfvit/error.hpp"
#include "mfvit/optim.hpp"
#include "mfvit/schedule.hpp"

namespace mfvit::fusion {

using ad::NamedTensor;
using ad::Tensor;

namespace {

void check_heads(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    throw ConfigError("cross-attention dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

}  // namespace

CrossAttentionParams CrossAttentionParams::uniform(std::size_t dim, std::size_t heads, Rng& rng) {
  check_heads(dim, heads);
  CrossAttentionParams p;
  p.dim = dim;
  p.heads = heads;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq.push_back(ad::uniform_param({dim, dim / heads}, bound, rng));
    p.wk.push_back(ad::uniform_param({dim, dim / heads}, bound, rng));
    p.wv.push_back(ad::uniform_param({dim, dim / heads}, bound, rng));
  }
  return p;
}

CrossAttentionParams CrossAttentionParams::zeros(std::size_t dim, std::size_t heads) {
  check_heads(dim, heads);
  CrossAttentionParams p;
  p.dim = dim;
  p.heads = heads;
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq.push_back(Tensor::zeros({dim, dim / heads}, true));
    p.wk.push_back(Tensor::zeros({dim, dim / heads}, true));
    p.wv.push_back(Tensor::zeros({dim, dim / heads}, true));
  }
  return p;
}

void CrossAttentionParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string s = std::to_string(h);
    out.push_back({prefix + ".wq" + s, wq[h]});
    out.push_back({prefix + ".wk" + s, wk[h]});
    out.push_back({prefix + ".wv" + s, wv[h]});
  }
}

Tensor cross_attend(const Tensor& cls_a, const Tensor& patches_b, const CrossAttentionParams& params,
                    CrossAttentionTrace* trace) {
  check_heads(params.dim, params.heads);
  if (cls_a.rank() != 2 || cls_a.dim(0) != 1 || cls_a.dim(1) != params.dim) {
    throw DimensionError("cross_attend: CLS must be [1," + std::to_string(params.dim) + "], got " +
                         ad::shape_str(cls_a.shape()));
  }
  if (patches_b.rank() != 2 || patches_b.dim(1) != params.dim) {
    throw DimensionError("cross_attend: patch width " + ad::shape_str(patches_b.shape()) + " != " +
                         std::to_string(params.dim));
  }
  const Tensor parts[] = {cls_a, patches_b};
  const Tensor x = ad::concat_rows(parts);
  const double s = 1.0 / std::sqrt(static_cast<double>(params.dim) / static_cast<double>(params.heads));
  std::vector<Tensor> outs;
  outs.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const Tensor q = ad::matmul(cls_a, params.wq[h]);
    const Tensor k = ad::matmul(x, params.wk[h]);
    const Tensor v = ad::matmul(x, params.wv[h]);
    const Tensor att = ad::softmax(ad::scale(ad::matmul_nt(q, k), s));
    if (trace) trace->weights.push_back(att);
    outs.push_back(ad::matmul(att, v));
  }
  return ad::concat_cols(outs);
}

std::pair<vit::TokenMatrix, vit::TokenMatrix> ca_block_forward(const vit::TokenMatrix& tokens_cxr,
                                                               const vit::TokenMatrix& tokens_enh,
                                                               const CaBlock& block, std::size_t batch) {
  if (tokens_cxr.rank() != 2 || tokens_cxr.shape() != tokens_enh.shape()) {
    throw DimensionError("ca_block: branch geometry differs: " + ad::shape_str(tokens_cxr.shape()) + " vs " +
                         ad::shape_str(tokens_enh.shape()));
  }
  if (batch == 0 || tokens_cxr.dim(0) % batch != 0 || tokens_cxr.dim(0) / batch < 2) {
    throw DimensionError("ca_block: token rows not divisible into " + std::to_string(batch) + " images");
  }
  const std::size_t n = tokens_cxr.dim(0) / batch;
  std::vector<Tensor> out_c, out_e;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * n;
    const Tensor cls_c = ad::slice_rows(tokens_cxr, r0, r0 + 1);
    const Tensor cls_e = ad::slice_rows(tokens_enh, r0, r0 + 1);
    const Tensor patch_c = ad::slice_rows(tokens_cxr, r0 + 1, r0 + n);
    const Tensor patch_e = ad::slice_rows(tokens_enh, r0 + 1, r0 + n);
    out_c.push_back(ad::add(cls_c, cross_attend(cls_c, patch_e, block.cxr)));
    out_c.push_back(patch_c);
    out_e.push_back(ad::add(cls_e, cross_attend(cls_e, patch_c, block.enh)));
    out_e.push_back(patch_e);
  }
  return {ad::concat_rows(out_c), ad::concat_rows(out_e)};
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects a matrix");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor hard_distill_loss(const Tensor& student_logits, const Tensor& teacher_cxr_logits,
                         const Tensor& teacher_enh_logits, std::span<const int> labels) {
  if (student_logits.rank() != 2 || student_logits.shape() != teacher_cxr_logits.shape() ||
      student_logits.shape() != teacher_enh_logits.shape()) {
    throw DimensionError("hard_distill_loss: logit shapes differ");
  }
  const std::size_t b = student_logits.dim(0), c = student_logits.dim(1);
  if (labels.size() != b) throw DimensionError("hard_distill_loss: label count != batch");
  const auto yc = argmax_rows(teacher_cxr_logits);
  const auto ye = argmax_rows(teacher_enh_logits);
  std::vector<double> counts(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw IndexError("hard_distill_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    counts[i * c + labels[i]] += 1.0;
    counts[i * c + yc[i]] += 1.0;
    counts[i * c + ye[i]] += 1.0;
  }
  for (double& v : counts) v /= 3.0;
  return ad::cross_entropy_dist(student_logits, Tensor::from({b, c}, std::move(counts)));
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "ca" || s == "CA") return FusionMode::ca;
  if (s == "lp" || s == "LP") return FusionMode::lp;
  throw ConfigError("unknown fusion mode '" + s + "' (expected ca or lp)");
}

std::string fusion_mode_name(FusionMode m) { return m == FusionMode::ca ? "ca" : "lp"; }

std::uint64_t parameter_fingerprint(const std::vector<NamedTensor>& params) {
  ad::Checkpoint c;
  for (const auto& p : params) c.add(p.name, p.tensor, ad::DType::f64);
  return c.fingerprint();
}

FusionModel::FusionModel(const vit::VitConfig& cfg, FusionMode mode, std::uint64_t seed)
    : cfg_(cfg),
      mode_(mode),
      init_rng_(seed),
      cxr_(cfg, init_rng_),
      enh_(cfg, init_rng_) {
  const auto dim = static_cast<std::size_t>(cfg.embed_dim);
  const auto classes = static_cast<std::size_t>(cfg.num_classes);
  ca_.cxr = CrossAttentionParams::uniform(dim, 3, init_rng_);
  ca_.enh = CrossAttentionParams::uniform(dim, 3, init_rng_);
  head_cxr_ = ad::Linear::fan_in_uniform(dim, classes, init_rng_);
  head_enh_ = ad::Linear::fan_in_uniform(dim, classes, init_rng_);
  set_branches_trainable(false);
}

void FusionModel::load_branches(const ad::Checkpoint& cxr, const ad::Checkpoint& enh) {
  vit::load_encoder(cxr_, cxr);
  vit::load_encoder(enh_, enh);
  if (mode_ == FusionMode::ca) {
    std::vector<NamedTensor> hc, he;
    head_cxr_.collect("head", hc);
    head_enh_.collect("head", he);
    if (cxr.contains("head.weight")) cxr.load_into(hc);
    if (enh.contains("head.weight")) enh.load_into(he);
  }
}

std::uint64_t FusionModel::cxr_fingerprint() const { return parameter_fingerprint(cxr_.parameters()); }
std::uint64_t FusionModel::enh_fingerprint() const { return parameter_fingerprint(enh_.parameters()); }

Tensor FusionModel::logits_from_tokens(const vit::TokenMatrix& tokens_cxr, const vit::TokenMatrix& tokens_enh,
                                       std::size_t batch) const {
  Tensor cls_c = cxr_.cls_rows(tokens_cxr, batch);
  Tensor cls_e = enh_.cls_rows(tokens_enh, batch);
  if (mode_ == FusionMode::ca) {
    const auto [zc, ze] = ca_block_forward(tokens_cxr, tokens_enh, ca_, batch);
    cls_c = ad::add(cxr_.cls_rows(zc, batch), cls_c);
    cls_e = ad::add(enh_.cls_rows(ze, batch), cls_e);
  }
  return ad::add(head_cxr_.forward(cls_c), head_enh_.forward(cls_e));
}

Tensor FusionModel::logits(std::span<const imgproc::Image2D> cxr, std::span<const imgproc::Image2D> enh) const {
  if (cxr.size() != enh.size()) throw DimensionError("fusion: branch batch sizes differ");
  const Tensor tc = cxr_.forward(cxr_.patchify_embed(cxr), cxr.size());
  const Tensor te = enh_.forward(enh_.patchify_embed(enh), enh.size());
  return logits_from_tokens(tc, te, cxr.size());
}

std::vector<NamedTensor> FusionModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  if (mode_ == FusionMode::ca) {
    ca_.cxr.collect("fusion.ca.cxr", out);
    ca_.enh.collect("fusion.ca.enh", out);
  }
  head_cxr_.collect("fusion.head_cxr", out);
  head_enh_.collect("fusion.head_enh", out);
  return out;
}

std::vector<NamedTensor> FusionModel::branch_parameters() const {
  auto out = cxr_.parameters();
  for (auto& p : out) p.name = "cxr." + p.name;
  for (auto p : enh_.parameters()) {
    p.name = "enh." + p.name;
    out.push_back(p);
  }
  return out;
}

void FusionModel::set_branches_trainable(bool on) {
  cxr_.set_requires_grad(on);
  enh_.set_requires_grad(on);
}

ad::Checkpoint FusionModel::to_checkpoint() const {
  ad::Checkpoint ckpt;
  ckpt.add_all(trainable_parameters());
  ckpt.meta = {{"stage", "fusion"},
               {"mode", fusion_mode_name(mode_)},
               {"cxr_fingerprint", ad::fingerprint_hex(cxr_fingerprint())},
               {"enh_fingerprint", ad::fingerprint_hex(enh_fingerprint())}};
  return ckpt;
}

void FusionModel::load_checkpoint(const ad::Checkpoint& ckpt) {
  for (const char* branch : {"cxr", "enh"}) {
    const std::string key = std::string(branch) + "_fingerprint";
    if (!ckpt.meta.contains(key)) continue;
    const std::string have =
        ad::fingerprint_hex(std::string(branch) == "cxr" ? cxr_fingerprint() : enh_fingerprint());
    const std::string want = ckpt.meta.at(key).get<std::string>();
    if (have != want) {
      throw ValidationError(std::string(branch) + " branch weights do not match the fusion checkpoint (have " +
                            have + ", expected " + want + ")");
    }
  }
  ckpt.load_into(trainable_parameters());
}

namespace {

Tensor teacher_logits(const vit::VitClassifier& teacher, std::uint64_t teacher_fp, const vit::VitEncoder& branch,
                      std::uint64_t branch_fp, const Tensor& branch_tokens, std::span<const imgproc::Image2D> images) {
  if (teacher_fp == branch_fp) {
    return teacher.logits_from_cls(branch.cls_rows(branch_tokens, images.size()));
  }
  return teacher.logits(images);
}

}  // namespace

FusionTrainResult train_fusion(FusionModel& model, std::span<const imgproc::Image2D> cxr,
                               std::span<const imgproc::Image2D> enh, std::span<const int> labels,
                               const FusionTrainConfig& cfg, const Teachers& teachers, std::uint64_t seed) {
  if (cxr.size() != enh.size() || cxr.size() != labels.size()) {
    throw DimensionError("train_fusion: branch images and labels differ in count");
  }
  if (cxr.empty()) throw ConfigError("train_fusion: empty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("train_fusion: epochs and batch_size must be >= 1");
  const bool ca = model.mode() == FusionMode::ca;
  if (ca && (teachers.cxr == nullptr || teachers.enh == nullptr)) {
    throw ConfigError("train_fusion: CA mode needs both teacher checkpoints");
  }
  model.set_branches_trainable(cfg.unfreeze_branches);

  std::vector<NamedTensor> params = model.trainable_parameters();
  if (cfg.unfreeze_branches) {
    for (auto& p : model.branch_parameters()) params.push_back(p);
  }
  ad::OptimizerConfig ocfg;
  ocfg.kind = ad::OptimizerKind::sgd_momentum;
  ocfg.momentum = cfg.momentum;
  ocfg.weight_decay = cfg.weight_decay;
  ad::Optimizer opt(ocfg, params);

  ad::LrSchedule sched;
  sched.kind = ad::ScheduleKind::cosine_annealing;
  sched.warmup_epochs = 0;
  sched.total_epochs = cfg.epochs;
  sched.base_lr = cfg.lr;

  std::uint64_t tc_fp = 0, te_fp = 0, bc_fp = 0, be_fp = 0;
  if (ca) {
    tc_fp = parameter_fingerprint(teachers.cxr->encoder().parameters());
    te_fp = parameter_fingerprint(teachers.enh->encoder().parameters());
    bc_fp = cfg.unfreeze_branches ? 0 : model.cxr_fingerprint();
    be_fp = cfg.unfreeze_branches ? 0 : model.enh_fingerprint();
  }

  const std::size_t n = cxr.size();
  const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t num_batches = (n + bs - 1) / bs;
  Rng shuffle_rng(mix_seed(seed, 11));
  const std::uint64_t aug_seed = mix_seed(seed, 12);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  imgproc::AugmentConfig aug = cfg.augment_cfg;
  aug.resize_to = model.config().image_size;

  // Frozen branches without augmentation see the same inputs every epoch:
  // encode them once.
  const bool cache = !cfg.augment && !cfg.unfreeze_branches;
  const int size = model.config().image_size;
  auto fit = [size](const imgproc::Image2D& im) {
    return im.width() == size && im.height() == size ? im : imgproc::resize_bilinear(im, size, size);
  };
  std::vector<Tensor> cache_tc, cache_te, cache_zc, cache_ze;
  if (cache) {
    ad::NoGradGuard guard;
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<imgproc::Image2D> one_c{fit(cxr[i])}, one_e{fit(enh[i])};
      cache_tc.push_back(model.cxr_branch().forward(model.cxr_branch().patchify_embed(one_c), 1));
      cache_te.push_back(model.enh_branch().forward(model.enh_branch().patchify_embed(one_e), 1));
      if (ca) {
        cache_zc.push_back(teacher_logits(*teachers.cxr, tc_fp, model.cxr_branch(), bc_fp, cache_tc.back(), one_c));
        cache_ze.push_back(teacher_logits(*teachers.enh, te_fp, model.enh_branch(), be_fp, cache_te.back(), one_e));
      }
    }
  }
  auto gather = [&](const std::vector<Tensor>& src, std::size_t begin, std::size_t end) {
    std::vector<Tensor> parts;
    for (std::size_t i = begin; i < end; ++i) parts.push_back(src[order[i]]);
    return ad::concat_rows(parts);
  };

  FusionTrainResult result;
  std::uint64_t sample_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b) {
      const std::size_t begin = b * bs, end = std::min(n, begin + bs);
      std::vector<imgproc::Image2D> xc, xe;
      std::vector<int> y;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        if (cfg.augment) {
          // Paired inputs share one geometric draw.
          const std::uint64_t s = mix_seed(aug_seed, sample_counter++);
          xc.push_back(imgproc::augment(cxr[idx], s, aug));
          xe.push_back(imgproc::augment(enh[idx], s, aug));
        } else if (!cache) {
          xc.push_back(fit(cxr[idx]));
          xe.push_back(fit(enh[idx]));
        }
        y.push_back(labels[idx]);
      }
      const double lr = ad::lr_at(sched, epoch + static_cast<double>(b) / num_batches);

      const std::size_t count = end - begin;
      Tensor tok_c, tok_e;
      if (cache) {
        tok_c = gather(cache_tc, begin, end);
        tok_e = gather(cache_te, begin, end);
      } else {
        std::optional<ad::NoGradGuard> guard;
        if (!cfg.unfreeze_branches) guard.emplace();
        tok_c = model.cxr_branch().forward(model.cxr_branch().patchify_embed(xc), count);
        tok_e = model.enh_branch().forward(model.enh_branch().patchify_embed(xe), count);
      }
      const Tensor z = model.logits_from_tokens(tok_c, tok_e, count);
      Tensor loss;
      if (ca) {
        Tensor zc, ze;
        if (cache) {
          zc = gather(cache_zc, begin, end);
          ze = gather(cache_ze, begin, end);
        } else {
          ad::NoGradGuard guard;
          zc = teacher_logits(*teachers.cxr, tc_fp, model.cxr_branch(), bc_fp, tok_c, xc);
          ze = teacher_logits(*teachers.enh, te_fp, model.enh_branch(), be_fp, tok_e, xe);
        }
        loss = hard_distill_loss(z, zc, ze, y);
      } else {
        loss = ad::cross_entropy(z, y);
      }
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw NumericError("train_fusion: non-finite loss in epoch " + std::to_string(epoch + 1));
      opt.zero_grad();
      loss.backward();
      opt.step(lr);
      loss_sum += lv * static_cast<double>(end - begin);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  model.set_branches_trainable(false);
  result.checkpoint = model.to_checkpoint();
  result.checkpoint.meta["seed"] = seed;
  result.checkpoint.meta["epochs"] = cfg.epochs;
  return result;
}

}  // namespace mfvit::fusion
