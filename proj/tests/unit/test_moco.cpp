#include <cmath>
#include <algorithm>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "mfvit/error.hpp"
#include "mfvit/moco.hpp"
#include "oracles.hpp"

using namespace mfvit;
using namespace mfvit::ssl;
using imgproc::Image2D;
using mfvit::testing::info_nce_scalar;
using mfvit::testing::random_unit;

namespace {

ad::Tensor rows_tensor(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return ad::Tensor::from({rows.size(), rows.front().size()}, std::move(flat), requires_grad);
}

// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
std::vector<std::vector<double>> random_orthogonal(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> q;
  while (q.size() < d) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (const auto& b : q) {
      double p = 0.0;
      for (std::size_t i = 0; i < d; ++i) p += v[i] * b[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    q.push_back(v);
  }
  return q;
}

std::vector<double> rotate_vec(const std::vector<std::vector<double>>& q, const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += q[i][j] * v[j];
  return out;
}

Image2D blob_image(int n, Rng& rng) {
  Image2D im(n, n);
  const double cx = rng.uniform(8, n - 8), cy = rng.uniform(8, n - 8), s = rng.uniform(3, 6);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      im.at(x, y) = 0.2 + 0.6 * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * s * s)) +
                    0.1 * rng.uniform();
  return im;
}

}  // namespace

TEST_CASE("two views are deterministic and independent") {
  Rng rng(1);
  const Image2D im = blob_image(32, rng);
  imgproc::AugmentConfig cfg;
  cfg.resize_to = 32;
  const auto a = two_view(im, 5, cfg);
  const auto b = two_view(im, 5, cfg);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  int equal = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto v = two_view(im, s, cfg);
    if (v.first == v.second) ++equal;
  }
  CHECK(equal == 0);
  const auto c = two_view(Image2D(32, 32, 0.4), 9, cfg);
  CHECK(c.first.min_value() == c.first.max_value());
  CHECK(c.second.min_value() == c.second.max_value());
}

TEST_CASE("info_nce matches direct scalar evaluation on random configurations") {
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 4 + rng.below(29), k = 1 + rng.below(64), b = 1 + rng.below(4);
    const double tau = rng.uniform(0.05, 1.0);
    std::vector<std::vector<double>> q, kp, neg;
    for (std::size_t i = 0; i < b; ++i) {
      q.push_back(random_unit(d, rng));
      kp.push_back(random_unit(d, rng));
    }
    RepresentationQueue queue(k, d);
    for (std::size_t i = 0; i < k; ++i) neg.push_back(random_unit(d, rng));
    queue.enqueue(rows_tensor(neg));
    double want = 0.0;
    for (std::size_t i = 0; i < b; ++i) want += info_nce_scalar(q[i], kp[i], neg, tau);
    want /= static_cast<double>(b);
    const double got = info_nce(rows_tensor(q), rows_tensor(kp), queue, tau).item();
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("uniform logits give log(K + 1) exactly") {
  ad::PrecisionScope f64(ad::Precision::f64);
  const std::vector<double> e0{1, 0, 0, 0};
  for (std::size_t k : {1u, 7u, 256u}) {
    RepresentationQueue queue(k, 4);
    queue.enqueue(rows_tensor(std::vector<std::vector<double>>(k, e0)));
    const double got = info_nce(rows_tensor({e0}), rows_tensor({e0}), queue, 0.2).item();
    CHECK(got == std::log(static_cast<double>(k + 1)));
  }
}

TEST_CASE("orthogonal negatives with K = 256 at tau 0.2") {
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(3);
  const std::size_t d = 8;
  std::vector<double> e0(d, 0.0);
  e0[0] = 1.0;
  std::vector<std::vector<double>> neg;
  for (int i = 0; i < 256; ++i) {
    auto v = random_unit(d, rng);
    v[0] = 0.0;
    double n = 0.0;
    for (double x : v) n += x * x;
    for (double& x : v) x /= std::sqrt(n);
    neg.push_back(v);
  }
  RepresentationQueue queue(256, d);
  queue.enqueue(rows_tensor(neg));
  const double got = info_nce(rows_tensor({e0}), rows_tensor({e0}), queue, 0.2).item();
  CHECK(got == doctest::Approx(std::log1p(256.0 * std::exp(-5.0))).epsilon(1e-12));
  CHECK(got == doctest::Approx(1.0024370264353466).epsilon(1e-12));
  CHECK(got == doctest::Approx(info_nce_scalar(e0, e0, neg, 0.2)).epsilon(1e-12));
}

TEST_CASE("info_nce is invariant to a common rotation") {
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(4);
  const std::size_t d = 16, k = 32;
  const auto rot = random_orthogonal(d, rng);
  std::vector<std::vector<double>> q, kp, neg, qr, kr, nr;
  for (int i = 0; i < 3; ++i) {
    q.push_back(random_unit(d, rng));
    kp.push_back(random_unit(d, rng));
    qr.push_back(rotate_vec(rot, q.back()));
    kr.push_back(rotate_vec(rot, kp.back()));
  }
  for (std::size_t i = 0; i < k; ++i) {
    neg.push_back(random_unit(d, rng));
    nr.push_back(rotate_vec(rot, neg.back()));
  }
  const double a = info_nce(rows_tensor(q), rows_tensor(kp), rows_tensor(neg), 0.2).item();
  const double b = info_nce(rows_tensor(qr), rows_tensor(kr), rows_tensor(nr), 0.2).item();
  CHECK(std::abs(a - b) < 1e-6);
  CHECK(a >= 0.0);
}

TEST_CASE("info_nce gradients and contract") {
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(5);
  const std::size_t d = 12;
  std::vector<std::vector<double>> q, kp, neg;
  for (int i = 0; i < 3; ++i) {
    q.push_back(random_unit(d, rng));
    kp.push_back(random_unit(d, rng));
  }
  for (int i = 0; i < 10; ++i) neg.push_back(random_unit(d, rng));
  ad::Tensor tq = rows_tensor(q, true), tk = rows_tensor(kp, true);
  const ad::Tensor tn = rows_tensor(neg);
  const auto r = mfvit::testing::finite_difference_check({tq, tk}, [&] { return info_nce(tq, tk, tn, 0.2); });
  CHECK(r.rel_error < 1e-6);
  const auto rb = mfvit::testing::finite_difference_check({tq, tk}, [&] { return info_nce_in_batch(tq, tk, 0.2); });
  CHECK(rb.rel_error < 1e-6);

  // Raising the positive similarity lowers the loss.
  const double base = info_nce(rows_tensor({q[0]}), rows_tensor({kp[0]}), tn, 0.2).item();
  const double tight = info_nce(rows_tensor({q[0]}), rows_tensor({q[0]}), tn, 0.2).item();
  CHECK(tight < base);

  std::vector<double> off = q[0];
  off[0] += 0.1;
  CHECK_THROWS_AS(info_nce(rows_tensor({off}), rows_tensor({kp[0]}), tn, 0.2), ContractError);
  RepresentationQueue empty(4, d);
  CHECK_THROWS(info_nce(rows_tensor({q[0]}), rows_tensor({kp[0]}), empty, 0.2));
}

TEST_CASE("momentum schedule") {
  const MocoConfig cfg;
  CHECK(momentum_at(0.0, cfg) == 0.9);
  CHECK(momentum_at(1.0, cfg) == 0.999);
  CHECK(momentum_at(0.5, cfg) == doctest::Approx(0.9495).epsilon(1e-15));
  double prev = momentum_at(0.0, cfg);
  for (int i = 1; i < 100; ++i) {
    const double m = momentum_at(i / 99.0, cfg);
    CHECK(m >= prev);
    prev = m;
  }
}

TEST_CASE("momentum update arithmetic") {
  ad::PrecisionScope f64(ad::Precision::f64);
  ad::Tensor q = ad::Tensor::full({4}, 1.0), k = ad::Tensor::zeros({4});
  const std::vector<ad::NamedTensor> qp{{"w", q}}, kp{{"w", k}};
  momentum_update(qp, kp, 1.0);
  CHECK(k.values() == std::vector<double>(4, 0.0));
  momentum_update(qp, kp, 0.9);
  for (double v : k.values()) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));
  momentum_update(qp, kp, 0.0);
  CHECK(k.values() == q.values());
  ad::Tensor bad = ad::Tensor::zeros({3});
  CHECK_THROWS_AS(momentum_update(qp, {{"w", bad}}, 0.5), DimensionError);
}

TEST_CASE("queue is a FIFO of unit rows") {
  RepresentationQueue queue(3, 2);
  CHECK(queue.empty());
  auto unit = [](double a) { return std::vector<double>{std::cos(a), std::sin(a)}; };
  queue.enqueue(rows_tensor({unit(0.1), unit(0.2)}));
  CHECK(queue.size() == 2);
  queue.enqueue(rows_tensor({unit(0.3), unit(0.4)}));
  CHECK(queue.size() == 3);
  // The oldest row (0.1) was overwritten by 0.4.
  std::vector<double> angles;
  for (std::size_t i = 0; i < 3; ++i) angles.push_back(std::atan2(queue.row(i)[1], queue.row(i)[0]));
  std::sort(angles.begin(), angles.end());
  CHECK(angles[0] == doctest::Approx(0.2));
  CHECK(angles[2] == doctest::Approx(0.4));
  CHECK_THROWS_AS(queue.enqueue(rows_tensor({{2.0, 0.0}})), ContractError);
}

TEST_CASE("smoke pretraining reduces the loss and moves the key encoder") {
  Rng rng(6);
  std::vector<Image2D> images;
  for (int i = 0; i < 64; ++i) images.push_back(blob_image(32, rng));
  MocoConfig cfg = MocoConfig::toy();
  cfg.epochs = 5;
  cfg.warmup_epochs = 1;
  // One batch of negatives, so the negative count is the same in every
  // epoch and the loss curve reflects learning rather than queue growth.
  cfg.queue_size = 16;
  MocoModel model(vit::VitConfig::toy(), cfg, 11);
  const auto key0 = model.key_parameters();
  std::vector<std::vector<double>> before;
  for (const auto& p : key0) before.push_back(p.tensor.values());

  PretrainOptions opts;
  opts.seed = 12;
  opts.augment.resize_to = 32;
  const PretrainResult res = pretrain(model, images, cfg, opts);
  REQUIRE(res.log.size() == 5);
  CHECK(res.log.back().mean_loss < res.log.front().mean_loss);
  CHECK(res.queue_rows == std::min<std::size_t>(cfg.queue_size, static_cast<std::size_t>(res.steps) * cfg.batch_size));

  bool moved = false;
  const auto key1 = model.key_parameters();
  for (std::size_t i = 0; i < key1.size(); ++i) {
    CHECK_FALSE(key1[i].tensor.has_grad());
    if (key1[i].tensor.values() != before[i]) moved = true;
  }
  CHECK(moved);
  CHECK_THROWS_AS(pretrain(model, std::span<const Image2D>(), cfg, opts), ConfigError);
}

TEST_CASE("zero momentum keeps both encoders equal") {
  Rng rng(7);
  std::vector<Image2D> images;
  for (int i = 0; i < 16; ++i) images.push_back(blob_image(32, rng));
  MocoConfig cfg = MocoConfig::toy();
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.m_start = 0.0;
  cfg.m_end = 0.0;
  MocoModel model(vit::VitConfig::toy(), cfg, 3);
  PretrainOptions opts;
  opts.augment.resize_to = 32;
  pretrain(model, images, cfg, opts);
  const auto q = model.query_momentum_source();
  const auto k = model.key_parameters();
  REQUIRE(q.size() == k.size());
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i].tensor.values() == k[i].tensor.values());
}
