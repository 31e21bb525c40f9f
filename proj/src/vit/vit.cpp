#include "mfvit/vit.hpp"

#include <cmath>

#include "mfvit/error.hpp"

namespace mfvit::vit {

using ad::NamedTensor;
using ad::Tensor;

VitConfig VitConfig::vit_small() { return {}; }

VitConfig VitConfig::toy() {
  VitConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 48;
  c.depth = 2;
  c.num_heads = 3;
  return c;
}

void VitConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim must be divisible by num_heads");
  }
  if (embed_dim % 4 != 0) throw ConfigError("embed_dim must be divisible by 4 for the sine-cosine table");
  if (depth < 0) throw ConfigError("depth must be >= 0");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be > 0");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

Tensor sincos_pos_embed(int grid, int dim) {
  if (dim <= 0 || dim % 4 != 0) throw ConfigError("positional embedding dim must be divisible by 4");
  if (grid <= 0) throw ConfigError("positional embedding grid must be positive");
  const int quarter = dim / 4;
  const int half = dim / 2;
  std::vector<double> table(static_cast<std::size_t>(grid) * grid * dim);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      double* row = table.data() + (static_cast<std::size_t>(r) * grid + c) * dim;
      for (int i = 0; i < quarter; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
        row[2 * i] = std::sin(r * omega);
        row[2 * i + 1] = std::cos(r * omega);
        row[half + 2 * i] = std::sin(c * omega);
        row[half + 2 * i + 1] = std::cos(c * omega);
      }
    }
  }
  return Tensor::from({static_cast<std::size_t>(grid) * grid, static_cast<std::size_t>(dim)}, std::move(table));
}

VitEncoder::VitEncoder(VitConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t dim = cfg_.embed_dim;
  const std::size_t patch_len = static_cast<std::size_t>(cfg_.patch_size) * cfg_.patch_size;
  patch_embed_ = ad::Linear::xavier(patch_len, dim, rng);
  cls_token_ = ad::normal_param({1, dim}, 0.02, rng);

  std::vector<double> pos(static_cast<std::size_t>(cfg_.num_tokens()) * dim, 0.0);
  if (cfg_.use_pos_embed) {
    const Tensor table = sincos_pos_embed(cfg_.grid(), cfg_.embed_dim);
    std::copy(table.data().begin(), table.data().end(), pos.begin() + dim);
  }
  ad::round_to_precision(pos);
  pos_embed_ = Tensor::from({static_cast<std::size_t>(cfg_.num_tokens()), dim}, std::move(pos));

  const std::size_t hidden = cfg_.mlp_hidden();
  for (int i = 0; i < cfg_.depth; ++i) {
    EncoderBlock b;
    b.ln1 = ad::LayerNormParams::create(dim);
    b.wq = ad::Linear::xavier(dim, dim, rng);
    b.wk = ad::Linear::xavier(dim, dim, rng);
    b.wv = ad::Linear::xavier(dim, dim, rng);
    b.proj = ad::Linear::xavier(dim, dim, rng);
    b.ln2 = ad::LayerNormParams::create(dim);
    b.fc1 = ad::Linear::xavier(dim, hidden, rng);
    b.fc2 = ad::Linear::xavier(hidden, dim, rng);
    blocks_.push_back(std::move(b));
  }
  norm_ = ad::LayerNormParams::create(dim);
}

TokenMatrix VitEncoder::patchify_embed(const imgproc::Image2D& image) const {
  return patchify_embed(std::span<const imgproc::Image2D>(&image, 1));
}

TokenMatrix VitEncoder::patchify_embed(std::span<const imgproc::Image2D> images) const {
  const int p = cfg_.patch_size;
  const int g = cfg_.grid();
  const std::size_t patch_len = static_cast<std::size_t>(p) * p;
  std::vector<Tensor> rows;
  rows.reserve(images.size() * 2);
  for (const auto& img : images) {
    if (img.width() != cfg_.image_size || img.height() != cfg_.image_size) {
      throw DimensionError("patchify_embed expects " + std::to_string(cfg_.image_size) + "x" +
                           std::to_string(cfg_.image_size) + " input, got " + std::to_string(img.width()) + "x" +
                           std::to_string(img.height()));
    }
    std::vector<double> patches(static_cast<std::size_t>(g) * g * patch_len);
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        double* dst = patches.data() + (static_cast<std::size_t>(gy) * g + gx) * patch_len;
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) dst[y * p + x] = img.at(gx * p + x, gy * p + y);
        }
      }
    }
    ad::round_to_precision(patches);
    const Tensor flat = Tensor::from({static_cast<std::size_t>(g) * g, patch_len}, std::move(patches));
    const Tensor embedded = patch_embed_.forward(flat);
    const Tensor parts[] = {cls_token_, embedded};
    rows.push_back(ad::add(ad::concat_rows(parts), pos_embed_));
  }
  return ad::concat_rows(rows);
}

namespace {

void require_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite activation in " + where);
  }
}

}  // namespace

TokenMatrix VitEncoder::forward(const TokenMatrix& tokens, std::size_t batch, AttentionTrace* trace) const {
  const std::size_t n = cfg_.num_tokens();
  const std::size_t dim = cfg_.embed_dim;
  if (tokens.rank() != 2 || tokens.dim(1) != dim || tokens.dim(0) != n * batch) {
    throw DimensionError("encoder expects " + std::to_string(batch * n) + "x" + std::to_string(dim) +
                         " tokens, got " + ad::shape_str(tokens.shape()));
  }
  const std::size_t heads = cfg_.num_heads;
  const std::size_t hd = cfg_.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor x = tokens;
  for (std::size_t li = 0; li < blocks_.size(); ++li) {
    const EncoderBlock& b = blocks_[li];
    const Tensor h = b.ln1.forward(x);
    const Tensor q = b.wq.forward(h);
    const Tensor k = b.wk.forward(h);
    const Tensor v = b.wv.forward(h);
    std::vector<Tensor> per_image;
    per_image.reserve(batch);
    for (std::size_t im = 0; im < batch; ++im) {
      const Tensor qi = ad::slice_rows(q, im * n, (im + 1) * n);
      const Tensor ki = ad::slice_rows(k, im * n, (im + 1) * n);
      const Tensor vi = ad::slice_rows(v, im * n, (im + 1) * n);
      std::vector<Tensor> head_out;
      head_out.reserve(heads);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const Tensor qh = ad::slice_cols(qi, hh * hd, (hh + 1) * hd);
        const Tensor kh = ad::slice_cols(ki, hh * hd, (hh + 1) * hd);
        const Tensor vh = ad::slice_cols(vi, hh * hd, (hh + 1) * hd);
        const Tensor att = ad::softmax(ad::scale(ad::matmul_nt(qh, kh), attn_scale));
        if (trace) trace->weights.push_back(att);
        head_out.push_back(ad::matmul(att, vh));
      }
      per_image.push_back(ad::concat_cols(head_out));
    }
    x = ad::add(x, b.proj.forward(ad::concat_rows(per_image)));
    x = ad::add(x, b.fc2.forward(ad::gelu(b.fc1.forward(b.ln2.forward(x)))));
    require_finite(x, "encoder.block" + std::to_string(li));
  }
  x = norm_.forward(x);
  require_finite(x, "encoder.norm");
  return x;
}

Tensor VitEncoder::cls_rows(const TokenMatrix& tokens, std::size_t batch) const {
  const std::size_t n = cfg_.num_tokens();
  std::vector<Tensor> rows;
  rows.reserve(batch);
  for (std::size_t im = 0; im < batch; ++im) rows.push_back(ad::slice_rows(tokens, im * n, im * n + 1));
  return ad::concat_rows(rows);
}

Tensor VitEncoder::encode_cls(std::span<const imgproc::Image2D> images) const {
  return cls_rows(forward(patchify_embed(images), images.size()), images.size());
}

std::vector<NamedTensor> VitEncoder::parameters() const {
  std::vector<NamedTensor> out;
  patch_embed_.collect("encoder.patch_embed", out);
  out.push_back({"encoder.cls_token", cls_token_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    const EncoderBlock& b = blocks_[i];
    b.ln1.collect(p + ".ln1", out);
    b.wq.collect(p + ".attn.wq", out);
    b.wk.collect(p + ".attn.wk", out);
    b.wv.collect(p + ".attn.wv", out);
    b.proj.collect(p + ".attn.proj", out);
    b.ln2.collect(p + ".ln2", out);
    b.fc1.collect(p + ".mlp.fc1", out);
    b.fc2.collect(p + ".mlp.fc2", out);
  }
  norm_.collect("encoder.norm", out);
  return out;
}

void VitEncoder::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

Protocol parse_protocol(const std::string& s) {
  if (s == "lp" || s == "LP") return Protocol::linear_probe;
  if (s == "ft" || s == "FT") return Protocol::fine_tune;
  throw ConfigError("unknown fine-tuning protocol '" + s + "' (expected lp or ft)");
}

std::string protocol_name(Protocol p) { return p == Protocol::linear_probe ? "lp" : "ft"; }

VitClassifier::VitClassifier(VitConfig cfg, Rng& rng)
    : encoder_(cfg, rng),
      head_(ad::Linear::fan_in_uniform(static_cast<std::size_t>(cfg.embed_dim),
                                       static_cast<std::size_t>(cfg.num_classes), rng)) {}

Tensor VitClassifier::logits(std::span<const imgproc::Image2D> images) const {
  return head_.forward(encoder_.encode_cls(images));
}

std::vector<NamedTensor> VitClassifier::parameters() const {
  auto out = encoder_.parameters();
  head_.collect("head", out);
  return out;
}

void VitClassifier::reinit_head(Rng& rng) {
  head_ = ad::Linear::fan_in_uniform(head_.in_features(), head_.out_features(), rng);
}

std::vector<NamedTensor> apply_freeze_policy(VitClassifier& model, Protocol protocol, Rng& rng) {
  switch (protocol) {
    case Protocol::linear_probe: {
      model.encoder().set_requires_grad(false);
      model.reinit_head(rng);
      std::vector<NamedTensor> out;
      model.head().collect("head", out);
      return out;
    }
    case Protocol::fine_tune: {
      model.encoder().set_requires_grad(true);
      auto all = model.parameters();
      for (auto& p : all) p.tensor.set_requires_grad(true);
      return all;
    }
  }
  throw ConfigError("unknown protocol");
}

void load_encoder(VitEncoder& encoder, const ad::Checkpoint& ckpt) { ckpt.load_into(encoder.parameters()); }

}  // namespace mfvit::vit
