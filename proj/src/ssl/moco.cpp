#include "mfvit/moco.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mfvit/error.hpp"
#include "mfvit/optim.hpp"
#include "mfvit/schedule.hpp"

namespace mfvit::ssl {

using ad::NamedTensor;
using ad::Tensor;

MocoConfig MocoConfig::toy() {
  MocoConfig c;
  c.queue_size = 256;
  c.proj_hidden = 128;
  c.proj_out = 64;
  c.pred_hidden = 128;
  c.epochs = 20;
  c.warmup_epochs = 2;
  return c;
}

void MocoConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("moco: tau must be > 0");
  if (queue_size < 1) throw ConfigError("moco: queue_size must be >= 1");
  if (!(0.0 <= m_start && m_start <= m_end && m_end <= 1.0)) {
    throw ConfigError("moco: need 0 <= m_start <= m_end <= 1");
  }
  if (proj_hidden == 0 || proj_out == 0 || pred_hidden == 0) throw ConfigError("moco: head widths must be > 0");
  if (epochs < 1) throw ConfigError("moco: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ConfigError("moco: warmup_epochs must be in [0, epochs)");
  if (batch_size < 2) throw ConfigError("moco: batch_size must be >= 2 (batch normalization)");
  if (!(lr > 0.0)) throw ConfigError("moco: lr must be > 0");
}

void to_json(nlohmann::json& j, const MocoConfig& c) {
  j = {{"tau", c.tau},
       {"queue_size", c.queue_size},
       {"proj_hidden", c.proj_hidden},
       {"proj_out", c.proj_out},
       {"pred_hidden", c.pred_hidden},
       {"m_start", c.m_start},
       {"m_end", c.m_end},
       {"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, MocoConfig& c) {
  c.tau = j.value("tau", c.tau);
  c.queue_size = j.value("queue_size", c.queue_size);
  c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
  c.proj_out = j.value("proj_out", c.proj_out);
  c.pred_hidden = j.value("pred_hidden", c.pred_hidden);
  c.m_start = j.value("m_start", c.m_start);
  c.m_end = j.value("m_end", c.m_end);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
}

namespace {

void require_unit_rows(const Tensor& t, const char* what) {
  const std::size_t rows = t.rows(), cols = t.cols();
  const auto v = t.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += v[r * cols + c] * v[r * cols + c];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-3) {
      throw ContractError(std::string(what) + " row " + std::to_string(r) + " is not unit-normalized (norm " +
                          std::to_string(std::sqrt(ss)) + ")");
    }
  }
}

}  // namespace

RepresentationQueue::RepresentationQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {
  if (capacity == 0 || dim == 0) throw ConfigError("queue capacity and dim must be > 0");
}

void RepresentationQueue::enqueue(const Tensor& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_) {
    throw DimensionError("queue expects [b," + std::to_string(dim_) + "] keys, got " + ad::shape_str(keys.shape()));
  }
  require_unit_rows(keys, "queued key");
  const auto v = keys.data();
  for (std::size_t r = 0; r < keys.dim(0); ++r) {
    std::copy(v.begin() + r * dim_, v.begin() + (r + 1) * dim_, storage_.begin() + cursor_ * dim_);
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }
}

std::span<const double> RepresentationQueue::row(std::size_t i) const {
  if (i >= size_) throw IndexError("queue row " + std::to_string(i) + " out of range");
  return std::span<const double>(storage_).subspan(i * dim_, dim_);
}

Tensor RepresentationQueue::as_tensor() const {
  return Tensor::from({size_, dim_}, std::vector<double>(storage_.begin(), storage_.begin() + size_ * dim_));
}

std::pair<imgproc::Image2D, imgproc::Image2D> two_view(const imgproc::Image2D& image, std::uint64_t seed,
                                                       const imgproc::AugmentConfig& cfg) {
  return {imgproc::augment(image, mix_seed(seed, 0), cfg), imgproc::augment(image, mix_seed(seed, 1), cfg)};
}

Tensor info_nce(const Tensor& r_q, const Tensor& r_k, const Tensor& negatives, double tau) {
  if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be > 0");
  if (r_q.rank() != 2 || r_q.shape() != r_k.shape()) {
    throw DimensionError("info_nce: query/key shapes differ: " + ad::shape_str(r_q.shape()) + " vs " +
                         ad::shape_str(r_k.shape()));
  }
  if (negatives.rank() != 2 || negatives.dim(1) != r_q.dim(1) || negatives.dim(0) == 0) {
    throw DimensionError("info_nce: negatives must be [K," + std::to_string(r_q.dim(1)) + "] with K >= 1");
  }
  require_unit_rows(r_q, "query");
  require_unit_rows(r_k, "positive key");
  const Tensor pos = ad::scale(ad::row_dot(r_q, r_k), 1.0 / tau);
  const Tensor neg = ad::scale(ad::matmul_nt(r_q, negatives), 1.0 / tau);
  const Tensor parts[] = {pos, neg};
  const std::vector<int> targets(r_q.dim(0), 0);
  return ad::cross_entropy(ad::concat_cols(parts), targets);
}

Tensor info_nce(const Tensor& r_q, const Tensor& r_k, const RepresentationQueue& queue, double tau) {
  if (queue.empty()) throw ContractError("info_nce: queue is empty");
  return info_nce(r_q, r_k, queue.as_tensor(), tau);
}

Tensor info_nce_in_batch(const Tensor& r_q, const Tensor& r_k, double tau) {
  if (r_q.rank() != 2 || r_q.shape() != r_k.shape() || r_q.dim(0) < 2) {
    throw DimensionError("info_nce_in_batch needs matching [b,d] inputs with b >= 2");
  }
  require_unit_rows(r_q, "query");
  require_unit_rows(r_k, "positive key");
  std::vector<int> targets(r_q.dim(0));
  std::iota(targets.begin(), targets.end(), 0);
  return ad::cross_entropy(ad::scale(ad::matmul_nt(r_q, r_k), 1.0 / tau), targets);
}

double momentum_at(double t, const MocoConfig& cfg) {
  t = std::clamp(t, 0.0, 1.0);
  return cfg.m_end - (cfg.m_end - cfg.m_start) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

void momentum_update(const std::vector<NamedTensor>& query_params, const std::vector<NamedTensor>& key_params,
                     double m) {
  ad::ema_update(key_params, query_params, m);
}

MlpHead::MlpHead(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("mlp head needs at least one layer");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.push_back(ad::Linear::fan_in_uniform(dims[i], dims[i + 1], rng));
    if (i + 2 < dims.size()) norms_.push_back(ad::BatchNorm1d::create(dims[i + 1]));
  }
}

Tensor MlpHead::forward(const Tensor& x, ad::Mode mode) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i < norms_.size()) h = ad::relu(norms_[i].forward(h, mode));
  }
  return h;
}

std::vector<NamedTensor> MlpHead::parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(prefix + ".fc" + std::to_string(i), out);
    if (i < norms_.size()) norms_[i].collect(prefix + ".bn" + std::to_string(i), out);
  }
  return out;
}

std::vector<NamedTensor> MlpHead::buffers(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].collect_buffers(prefix + ".bn" + std::to_string(i), out);
  return out;
}

void MlpHead::load_buffers(const ad::Checkpoint& ckpt, const std::string& prefix) {
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    const std::string p = prefix + ".bn" + std::to_string(i);
    norms_[i].load_buffers(ckpt.get(p + ".running_mean").values, ckpt.get(p + ".running_var").values);
  }
}

void MlpHead::set_requires_grad(bool on) {
  for (auto& p : parameters("")) p.tensor.set_requires_grad(on);
}

MocoModel::MocoModel(const vit::VitConfig& vit_cfg, const MocoConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      query_encoder_(vit_cfg, init_rng_),
      query_proj_({static_cast<std::size_t>(vit_cfg.embed_dim), cfg.proj_hidden, cfg.proj_hidden, cfg.proj_out},
                  init_rng_),
      query_pred_({cfg.proj_out, cfg.pred_hidden, cfg.proj_out}, init_rng_),
      key_encoder_(vit_cfg, init_rng_),
      key_proj_({static_cast<std::size_t>(vit_cfg.embed_dim), cfg.proj_hidden, cfg.proj_hidden, cfg.proj_out},
                init_rng_) {
  cfg_.validate();
  ad::copy_values(key_parameters(), query_momentum_source());
  key_encoder_.set_requires_grad(false);
  key_proj_.set_requires_grad(false);
}

Tensor MocoModel::query_repr(std::span<const imgproc::Image2D> images) {
  const Tensor cls = query_encoder_.encode_cls(images);
  return ad::l2_normalize_rows(query_pred_.forward(query_proj_.forward(cls, ad::Mode::train), ad::Mode::train));
}

Tensor MocoModel::key_repr(std::span<const imgproc::Image2D> images) {
  ad::NoGradGuard no_grad;
  const Tensor cls = key_encoder_.encode_cls(images);
  return ad::l2_normalize_rows(key_proj_.forward(cls, ad::Mode::train));
}

std::vector<NamedTensor> MocoModel::query_parameters() const {
  auto out = query_encoder_.parameters();
  for (auto& p : query_proj_.parameters("proj")) out.push_back(p);
  for (auto& p : query_pred_.parameters("pred")) out.push_back(p);
  return out;
}

std::vector<NamedTensor> MocoModel::query_momentum_source() const {
  auto out = query_encoder_.parameters();
  for (auto& p : query_proj_.parameters("proj")) out.push_back(p);
  return out;
}

std::vector<NamedTensor> MocoModel::key_parameters() const {
  auto out = key_encoder_.parameters();
  for (auto& p : out) p.name = "key." + p.name;
  for (auto& p : key_proj_.parameters("key.proj")) out.push_back(p);
  return out;
}

ad::Checkpoint MocoModel::to_checkpoint() const {
  ad::Checkpoint ckpt;
  ckpt.add_all(query_parameters());
  ckpt.add_all(query_proj_.buffers("proj"));
  ckpt.add_all(query_pred_.buffers("pred"));
  return ckpt;
}

namespace {

void append_log(const std::filesystem::path& path, const EpochLog& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw DependencyError("cannot open training log " + path.string());
  if (fresh) os << "epoch,mean_loss,lr,momentum\n";
  os.precision(17);
  os << row.epoch << ',' << row.mean_loss << ',' << row.lr << ',' << row.momentum << '\n';
}

}  // namespace

PretrainResult pretrain(MocoModel& model, std::span<const imgproc::Image2D> images, const MocoConfig& cfg,
                        const PretrainOptions& opts) {
  cfg.validate();
  if (images.empty()) throw ConfigError("pretrain: dataset is empty");
  if (images.size() < 2) throw ConfigError("pretrain: need at least 2 images per batch");
  const std::size_t n = images.size();
  const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n);
  std::size_t num_batches = n / bs;
  if (n % bs >= 2) ++num_batches;

  ad::OptimizerConfig ocfg;
  ocfg.kind = ad::OptimizerKind::adamw;
  ocfg.weight_decay = cfg.weight_decay;
  ad::Optimizer opt(ocfg, model.query_parameters());
  const auto key_params = model.key_parameters();
  const auto momentum_src = model.query_momentum_source();

  ad::LrSchedule sched;
  sched.kind = ad::ScheduleKind::cosine_with_warmup;
  sched.warmup_epochs = cfg.warmup_epochs;
  sched.total_epochs = cfg.epochs;
  sched.base_lr = ad::scaled_base_lr(cfg.lr, cfg.batch_size);
  sched.min_lr = 0.0;

  imgproc::AugmentConfig aug = opts.augment;
  aug.resize_to = model.query_encoder().config().image_size;
  RepresentationQueue queue(cfg.queue_size, cfg.proj_out);
  Rng shuffle_rng(mix_seed(opts.seed, 2));
  const std::uint64_t view_seed = mix_seed(opts.seed, 3);

  PretrainResult result;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double total_steps = static_cast<double>(cfg.epochs) * num_batches;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double loss_sum = 0.0;
    double lr = 0.0, m = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b) {
      const std::size_t begin = b * bs;
      const std::size_t end = std::min(n, begin + bs);
      std::vector<imgproc::Image2D> xq, xk;
      for (std::size_t i = begin; i < end; ++i) {
        auto views = two_view(images[order[i]], mix_seed(view_seed, static_cast<std::uint64_t>(result.steps) * bs + i - begin),
                              aug);
        xq.push_back(std::move(views.first));
        xk.push_back(std::move(views.second));
      }
      const double epoch_pos = epoch + static_cast<double>(b) / num_batches;
      lr = ad::lr_at(sched, epoch_pos);
      m = momentum_at(static_cast<double>(result.steps) / total_steps, cfg);

      const Tensor q = model.query_repr(xq);
      const Tensor k = model.key_repr(xk);
      const Tensor loss = queue.empty() ? info_nce_in_batch(q, k, cfg.tau) : info_nce(q, k, queue, cfg.tau);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(result.steps));
      opt.zero_grad();
      loss.backward();
      opt.step(lr);
      momentum_update(momentum_src, key_params, m);
      queue.enqueue(k);
      loss_sum += lv;
      ++result.steps;
    }
    EpochLog row{epoch + 1, loss_sum / num_batches, lr, m};
    result.log.push_back(row);
    if (!opts.log_csv.empty()) append_log(opts.log_csv, row);
    if (opts.checkpoint_every > 0 && !opts.checkpoint_path.empty() && (epoch + 1) % opts.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      ad::Checkpoint snap = model.to_checkpoint();
      snap.meta = {{"stage", "pretrain"}, {"epoch", epoch + 1}, {"seed", opts.seed}};
      auto p = opts.checkpoint_path;
      p += ".epoch" + std::to_string(epoch + 1);
      snap.write(p);
    }
  }

  result.queue_rows = queue.size();
  result.checkpoint = model.to_checkpoint();
  result.checkpoint.meta = {{"stage", "pretrain"},
                            {"epoch", cfg.epochs},
                            {"seed", opts.seed},
                            {"moco", cfg},
                            {"final_loss", result.log.back().mean_loss}};
  if (!opts.checkpoint_path.empty()) result.checkpoint.write(opts.checkpoint_path);
  return result;
}

}  // namespace mfvit::ssl
