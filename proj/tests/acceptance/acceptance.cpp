// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Usage: acceptance [work_dir]

#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mfvit/checkpoint.hpp"
#include "mfvit/enhance.hpp"
#include "mfvit/error.hpp"
#include "mfvit/experiment.hpp"
#include "mfvit/fusion.hpp"
#include "mfvit/moco.hpp"
#include "mfvit/stats.hpp"
#include "mfvit/vit.hpp"
#include "oracles.hpp"

using namespace mfvit;
namespace fs = std::filesystem;
using nlohmann::json;
using mfvit::testing::finite_difference_check;
using mfvit::testing::project;
using mfvit::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void run_criterion(const std::string& name, const std::function<Outcome()>& f) {
  try {
    report(name, f());
  } catch (const std::exception& e) {
    report(name, {false, std::string("exception: ") + e.what()});
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

imgproc::Image2D random_image(int n, Rng& rng) {
  imgproc::Image2D im(n, n);
  for (double& v : im.values()) v = rng.uniform();
  return im;
}

ad::Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return ad::Tensor::from({rows.size(), rows.front().size()}, std::move(flat));
}

// ---------------------------------------------------------------- gradients

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(101);
  std::vector<std::pair<std::string, testing::GradCheck>> ops;
  auto check = [&](const std::string& name, std::vector<ad::Tensor> leaves, std::function<ad::Tensor()> f,
                   std::size_t max_per_leaf = SIZE_MAX) {
    ops.emplace_back(name, finite_difference_check(std::move(leaves), f, 1e-5, max_per_leaf));
  };

  {
    auto a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    check("matmul", {a, b}, [=] { return project(ad::matmul(a, b), 1); });
  }
  {
    auto x = random_tensor({4, 6}, rng, 2.0);
    check("softmax", {x}, [=] { return project(ad::softmax(x), 2); });
  }
  {
    auto x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    check("layernorm", {x, g, b}, [=] { return project(ad::layernorm(x, g, b), 3); });
  }
  {
    auto x = random_tensor({6, 4}, rng), g = random_tensor({4}, rng), b = random_tensor({4}, rng);
    check("batchnorm", {x, g, b}, [=] {
      ad::BatchNormState st(4);
      return project(ad::batchnorm(x, g, b, st, ad::Mode::train), 4);
    });
  }
  {
    auto x = random_tensor({5, 5}, rng, 3.0);
    check("gelu", {x}, [=] { return project(ad::gelu(x), 5); });
  }
  {
    auto z = random_tensor({5, 3}, rng, 2.0);
    const std::vector<int> y{0, 2, 1, 1, 0};
    check("cross_entropy", {z}, [=] { return ad::cross_entropy(z, y); });
  }
  {
    auto q = random_tensor({3, 8}, rng), k = random_tensor({3, 8}, rng);
    std::vector<std::vector<double>> neg;
    for (int i = 0; i < 16; ++i) neg.push_back(testing::random_unit(8, rng));
    const ad::Tensor negatives = rows_tensor(neg);
    check("info_nce", {q, k}, [=] {
      return ssl::info_nce(ad::l2_normalize_rows(q), ad::l2_normalize_rows(k), negatives, 0.2);
    });
  }
  {
    fusion::CrossAttentionParams p = fusion::CrossAttentionParams::uniform(12, 3, rng);
    std::vector<ad::Tensor> leaves;
    for (auto* ws : {&p.wq, &p.wk, &p.wv})
      for (auto& w : *ws) {
        w.set_requires_grad(true);
        leaves.push_back(w);
      }
    auto cls = random_tensor({1, 12}, rng), patches = random_tensor({5, 12}, rng);
    leaves.push_back(cls);
    leaves.push_back(patches);
    check("cross_attention", leaves, [=] { return project(fusion::cross_attend(cls, patches, p), 6); });
  }

  bool pass = true;
  std::string detail;
  for (const auto& [name, r] : ops) {
    pass = pass && r.rel_error < 1e-5;
    detail += fmt("%s %.1e, ", name.c_str(), r.rel_error);
  }

  vit::VitConfig cfg = vit::VitConfig::toy();
  cfg.depth = 1;
  Rng init(102);
  vit::VitClassifier model(cfg, init);
  const imgproc::Image2D ims[] = {random_image(32, rng), random_image(32, rng)};
  const std::vector<int> labels{1, 2};
  std::vector<ad::Tensor> leaves;
  for (auto& p : model.parameters()) leaves.push_back(p.tensor);
  const auto net = finite_difference_check(
      leaves, [&] { return ad::cross_entropy(model.logits(ims), labels); }, 1e-5, 32);
  pass = pass && net.rel_error < 1e-4;
  const double secs = seconds_since(t0);
  pass = pass && secs < 60.0;
  detail += fmt("toy ViT depth-1 %.1e over %zu entries; %.1f s (limit 60 s)", net.rel_error, net.checked, secs);
  return {pass, detail};
}

// -------------------------------------------------------------- enhancement

Outcome enhancement_invariants() {
  const auto t0 = Clock::now();
  const imgproc::Enhancer enhancer(imgproc::EnhanceConfig{});
  Rng rng(201);
  const double cs[] = {0.5, 2.0, 10.0};
  double worst_shift = 0.0, worst_scale = 0.0, worst_rise = 0.0;
  bool in_range = true;
  std::size_t alternations = 0;
  auto range_ok = [](const imgproc::EnhancedFeatures& f) {
    for (const auto* im : {&f.lwpa, &f.lpe, &f.elea, &f.mf})
      if (im->min_value() < 0.0 || im->max_value() > 1.0) return false;
    return true;
  };
  for (int i = 0; i < 20; ++i) {
    const imgproc::Image2D img = random_image(512, rng);
    imgproc::EleaTrace trace;
    const auto base = enhancer.run(img, &trace);
    in_range = in_range && range_ok(base);
    for (std::size_t j = 1; j < trace.iterations.size(); ++j) {
      const auto& prev = trace.iterations[j - 1];
      const auto& cur = trace.iterations[j];
      if (cur.beta != prev.beta) continue;
      worst_rise = std::max(worst_rise, (cur.objective - prev.objective) / std::abs(prev.objective));
      ++alternations;
    }
    for (double c : cs) {
      imgproc::Image2D shifted = img, scaled = img;
      for (double& v : shifted.values()) v += c;
      for (double& v : scaled.values()) v *= c;
      const auto fs = enhancer.run(shifted);
      const auto fc = enhancer.run(scaled);
      in_range = in_range && range_ok(fs) && range_ok(fc);
      worst_shift = std::max(worst_shift, imgproc::max_abs_diff(fs.mf, base.mf));
      worst_scale = std::max(worst_scale, imgproc::max_abs_diff(fc.mf, base.mf));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_shift < 1e-6 && worst_scale < 1e-4 && worst_rise <= 1e-9 && in_range && secs < 120.0;
  return {pass, fmt("20 images 512x512; max |MF(I+c)-MF(I)| %.2e (limit 1e-6), max |MF(cI)-MF(I)| %.2e (limit "
                    "1e-4); worst relative objective rise %.2e over %zu alternations (limit 1e-9); outputs in "
                    "[0,1]: %s; %.1f s (limit 120 s)",
                    worst_shift, worst_scale, worst_rise, alternations, in_range ? "yes" : "no", secs)};
}

// ------------------------------------------------------------------ losses

Outcome info_nce_oracle() {
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(301);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 4 + rng.below(61), k = 1 + rng.below(256), b = 1 + rng.below(8);
    const double tau = rng.uniform(0.05, 1.0);
    std::vector<std::vector<double>> q, kp, neg;
    for (std::size_t i = 0; i < b; ++i) {
      q.push_back(testing::random_unit(d, rng));
      kp.push_back(testing::random_unit(d, rng));
    }
    for (std::size_t i = 0; i < k; ++i) neg.push_back(testing::random_unit(d, rng));
    ssl::RepresentationQueue queue(k, d);
    queue.enqueue(rows_tensor(neg));
    double want = 0.0;
    for (std::size_t i = 0; i < b; ++i) want += testing::info_nce_scalar(q[i], kp[i], neg, tau);
    want /= static_cast<double>(b);
    const double got = ssl::info_nce(rows_tensor(q), rows_tensor(kp), queue, tau).item();
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  bool exact = true;
  const std::vector<double> e0{1, 0, 0, 0};
  for (std::size_t k : {1u, 16u, 255u, 4096u}) {
    ssl::RepresentationQueue queue(k, 4);
    queue.enqueue(rows_tensor(std::vector<std::vector<double>>(k, e0)));
    exact = exact && ssl::info_nce(rows_tensor({e0}), rows_tensor({e0}), queue, 0.2).item() ==
                         std::log(static_cast<double>(k + 1));
  }
  return {worst < 1e-9 && exact, fmt("100 random configurations, worst relative error %.2e (limit 1e-9); uniform "
                                     "logits equal log(K+1) exactly for K in {1,16,255,4096}: %s",
                                     worst, exact ? "yes" : "no")};
}

Outcome hard_distill_reduction() {
  ad::PrecisionScope f64(ad::Precision::f64);
  Rng rng(401);
  double worst_value = 0.0, worst_grad = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(32);
    std::vector<int> y(b);
    for (auto& v : y) v = static_cast<int>(rng.below(3));
    std::vector<double> tc(b * 3), te(b * 3);
    for (std::size_t i = 0; i < b; ++i)
      for (int c = 0; c < 3; ++c) {
        tc[i * 3 + c] = rng.uniform(-1, 1) + (c == y[i] ? 3.0 : 0.0);
        te[i * 3 + c] = rng.uniform(-1, 1) + (c == y[i] ? 3.0 : 0.0);
      }
    ad::Tensor za = random_tensor({b, 3}, rng, 3.0);
    ad::Tensor zb = za.clone_leaf(true);
    const ad::Tensor ce = ad::cross_entropy(za, y);
    const ad::Tensor hd = fusion::hard_distill_loss(zb, ad::Tensor::from({b, 3}, tc), ad::Tensor::from({b, 3}, te), y);
    worst_value = std::max(worst_value, std::abs(ce.item() - hd.item()));
    ce.backward();
    hd.backward();
    for (std::size_t i = 0; i < b * 3; ++i) worst_grad = std::max(worst_grad, std::abs(za.grad()[i] - zb.grad()[i]));
  }
  return {worst_value < 1e-9 && worst_grad < 1e-9,
          fmt("50 random batches, max value difference %.2e, max gradient difference %.2e (limit 1e-9)", worst_value,
              worst_grad)};
}

// -------------------------------------------------------------- CA block

Outcome ca_structure() {
  Rng rng(501);
  bool passthrough = true, identity = true, geometry = true, ca_changes_cls = true;
  std::string shapes;
  for (const auto& cfg : {vit::VitConfig::vit_small(), vit::VitConfig::toy()}) {
    const std::size_t n = static_cast<std::size_t>(cfg.num_tokens()), d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t batch = 2;
    ad::Tensor a = random_tensor({batch * n, d}, rng, 1.0, false);
    ad::Tensor b = random_tensor({batch * n, d}, rng, 1.0, false);
    ad::round_to_precision(a.mutable_data());
    ad::round_to_precision(b.mutable_data());
    const std::size_t heads = static_cast<std::size_t>(cfg.num_heads);
    fusion::CaBlock block{fusion::CrossAttentionParams::uniform(d, heads, rng),
                          fusion::CrossAttentionParams::uniform(d, heads, rng)};
    const auto [ya, yb] = fusion::ca_block_forward(a, b, block, batch);
    geometry = geometry && ya.shape() == ad::Shape{batch * n, d} && yb.shape() == ad::Shape{batch * n, d};
    for (std::size_t img = 0; img < batch; ++img) {
      const std::size_t r0 = img * n;
      for (std::size_t i = (r0 + 1) * d; i < (r0 + n) * d; ++i) {
        passthrough = passthrough && ya.values()[i] == a.values()[i] && yb.values()[i] == b.values()[i];
      }
      bool differs = false;
      for (std::size_t c = 0; c < d; ++c) differs = differs || ya.values()[r0 * d + c] != a.values()[r0 * d + c];
      ca_changes_cls = ca_changes_cls && differs;
    }
    fusion::CaBlock zero{fusion::CrossAttentionParams::zeros(d, heads), fusion::CrossAttentionParams::zeros(d, heads)};
    const auto [za, zb] = fusion::ca_block_forward(a, b, zero, batch);
    identity = identity && za.values() == a.values() && zb.values() == b.values();

    // Encoder output geometry for one image.
    vit::VitConfig one = cfg;
    one.depth = 1;
    Rng init(502);
    const vit::VitEncoder enc(one, init);
    const imgproc::Image2D im = random_image(cfg.image_size, rng);
    const auto tokens = enc.forward(enc.patchify_embed(im), 1);
    shapes += fmt("%zux%zu ", tokens.rows(), tokens.cols());
    geometry = geometry && tokens.shape() == ad::Shape{n, d};
  }
  geometry = geometry && shapes == "197x384 17x48 ";
  return {passthrough && identity && geometry && ca_changes_cls,
          fmt("patch passthrough bit-exact: %s; zero projections identity: %s; token geometry %s(expected 197x384 "
              "17x48)",
              passthrough ? "yes" : "no", identity ? "yes" : "no", shapes.c_str())};
}

// --------------------------------------------------------------- momentum

Outcome momentum_schedule() {
  const ssl::MocoConfig cfg;
  const double m0 = ssl::momentum_at(0.0, cfg), m1 = ssl::momentum_at(1.0, cfg), mid = ssl::momentum_at(0.5, cfg);
  Rng rng(601);
  std::vector<ad::NamedTensor> q, k;
  for (int i = 0; i < 3; ++i) {
    q.push_back({"w" + std::to_string(i), random_tensor({4, 5}, rng)});
    k.push_back({"w" + std::to_string(i), random_tensor({4, 5}, rng)});
  }
  for (auto& t : q) ad::round_to_precision(t.tensor.mutable_data());
  for (auto& t : k) ad::round_to_precision(t.tensor.mutable_data());
  std::vector<std::vector<double>> before;
  for (const auto& t : k) before.push_back(t.tensor.values());
  ssl::momentum_update(q, k, 1.0);
  bool identity = true;
  for (std::size_t i = 0; i < k.size(); ++i) identity = identity && k[i].tensor.values() == before[i];
  const bool pass = m0 == 0.9 && m1 == 0.999 && std::abs(mid - 0.9495) < 1e-12 && identity;
  return {pass, fmt("m(0) = %.17g, m(1) = %.17g, m(0.5) = %.17g (expected 0.9495); update with m = 1 is the "
                    "identity: %s",
                    m0, m1, mid, identity ? "yes" : "no")};
}

// --------------------------------------------------------------- toy run

const json& summary_cell(const json& summary, const std::string& method, double fraction, const std::string& split) {
  for (const auto& c : summary.at("cells")) {
    if (c.at("method") == method && c.at("fraction").get<double>() == fraction && c.at("split") == split) return c;
  }
  throw ValidationError("summary has no cell " + method + "/" + split);
}

struct ToyRun {
  json out;
  double seconds = 0.0;
};

void toy_end_to_end(const fs::path& dir, ToyRun& run) {
  const pipeline::ExperimentConfig cfg = pipeline::ExperimentConfig::toy();
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  run.out = pipeline::run_experiment(cfg, dir);
  run.seconds = seconds_since(t0);
  const json& pre = run.out.at("pretrain");
  const json& summary = run.out.at("report");

  run_criterion("toy_runtime", [&]() -> Outcome {
    return {run.seconds < 600.0,
            fmt("full toy experiment, single thread, %.1f s (limit 600 s); test splits %s", run.seconds,
                cfg.test_splits.size() == 2 ? "test1 and test2" : "test1")};
  });

  run_criterion("toy_a_pretraining_loss_drops", [&]() -> Outcome {
    bool pass = true;
    std::string detail;
    for (const char* branch : {"cxr", "enh"}) {
      const auto losses = pre.at(branch).at("epoch_loss").get<std::vector<double>>();
      pass = pass && losses.front() > losses.back();
      detail += fmt("%s InfoNCE %.4f -> %.4f over %zu epochs; ", branch, losses.front(), losses.back(), losses.size());
    }
    return {pass, detail};
  });

  run_criterion("toy_b_pretrained_lp_beats_random_lp", [&]() -> Outcome {
    bool pass = true;
    std::string detail;
    for (double f : cfg.fractions) {
      for (pipeline::Split sp : cfg.test_splits) {
        const std::string s = pipeline::split_name(sp);
        const double moco = summary_cell(summary, "cxr_lp", f, s).at("mean").get<double>();
        const double rnd = summary_cell(summary, "random_lp", f, s).at("mean").get<double>();
        if (sp == pipeline::Split::test1) pass = pass && moco - rnd >= 0.10;
        detail += fmt("f%s %s %.2f vs %.2f; ", pipeline::fraction_tag(f).c_str(), s.c_str(), 100 * moco, 100 * rnd);
      }
    }
    return {pass, detail + "gate: +10 points on test1 at every fraction (mean of 5 repeats)"};
  });

  run_criterion("toy_c_fusion_matches_best_branch", [&]() -> Outcome {
    bool pass = true;
    std::string detail;
    for (double f : cfg.fractions) {
      for (pipeline::Split sp : cfg.test_splits) {
        const std::string s = pipeline::split_name(sp);
        const double ca = summary_cell(summary, "mf_ca", f, s).at("mean").get<double>();
        const double best = std::max(summary_cell(summary, "cxr_ft", f, s).at("mean").get<double>(),
                                     summary_cell(summary, "enh_ft", f, s).at("mean").get<double>());
        if (sp == pipeline::Split::test1) pass = pass && ca >= best - 0.01;
        detail += fmt("f%s %s CA %.2f vs best FT %.2f; ", pipeline::fraction_tag(f).c_str(), s.c_str(), 100 * ca,
                      100 * best);
      }
    }
    return {pass, detail + "gate: CA >= best FT - 1 point on test1 at every fraction"};
  });

  run_criterion("toy_d_paired_t_test_oracle", [&]() -> Outcome {
    double worst_t = 0.0, worst_p = 0.0;
    std::size_t checked = 0, degenerate = 0;
    bool flags_ok = true;
    for (const auto& tt : summary.at("ttests")) {
      const double f = tt.at("fraction").get<double>();
      const std::string s = tt.at("split").get<std::string>();
      const auto a = summary_cell(summary, tt.at("method_a").get<std::string>(), f, s).at("accuracies").get<std::vector<double>>();
      const auto b = summary_cell(summary, tt.at("method_b").get<std::string>(), f, s).at("accuracies").get<std::vector<double>>();
      const std::size_t n = a.size();
      double md = 0.0;
      for (std::size_t i = 0; i < n; ++i) md += (a[i] - b[i]) / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - md) * (a[i] - b[i] - md);
      const double sd = std::sqrt(ss / (n - 1));
      const double p = tt.at("p").get<double>();
      ++checked;
      if (sd == 0.0) {
        ++degenerate;
        flags_ok = flags_ok && tt.at("degenerate").get<bool>() && p == (md == 0.0 ? 1.0 : 0.0);
        continue;
      }
      const double t_ref = md / (sd / std::sqrt(static_cast<double>(n)));
      boost::math::students_t dist(static_cast<double>(n - 1));
      const double p_ref = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t_ref)));
      worst_t = std::max(worst_t, std::abs(tt.at("t").get<double>() - t_ref));
      worst_p = std::max(worst_p, std::abs(p - p_ref));
      flags_ok = flags_ok && !tt.at("degenerate").get<bool>();
    }
    const std::vector<double> ra{0.90, 0.92, 0.91, 0.93, 0.94}, rb{0.88, 0.90, 0.90, 0.92, 0.91};
    const auto ref = pipeline::paired_t_test(ra, rb);
    const bool scipy_ok =
        std::abs(ref.t - 4.810702354423657) < 1e-6 && std::abs(ref.p - 0.008580918721924664) < 1e-6;
    return {checked > 0 && worst_t < 1e-6 && worst_p < 1e-6 && flags_ok && scipy_ok,
            fmt("%zu tests against a Boost Student-t oracle (%zu degenerate), max |dt| %.2e, max |dp| %.2e (limit "
                "1e-6); reference pair matches scipy ttest_rel: %s",
                checked, degenerate, worst_t, worst_p, scipy_ok ? "yes" : "no")};
  });
}

// -------------------------------------------------------- reproducibility

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] = std::string(std::istreambuf_iterator<char>(is), {});
  }
  return files;
}

std::size_t count_differences(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b,
                              std::string& first) {
  std::size_t diff = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      if (diff++ == 0) first = name;
    }
  }
  for (const auto& [name, bytes] : b) {
    if (!a.count(name) && diff++ == 0) first = name;
  }
  return diff;
}

Outcome reproducibility(const fs::path& work, const fs::path& toy_dir) {
  pipeline::ExperimentConfig cfg = pipeline::ExperimentConfig::toy();
  cfg.synth.n_per_class = 10;
  cfg.moco.epochs = 3;
  cfg.moco.warmup_epochs = 1;
  cfg.lp.epochs = 5;
  cfg.ft.epochs = 2;
  cfg.fusion_ca.epochs = 2;
  cfg.fusion_lp.epochs = 3;
  cfg.repeats = 2;
  cfg.fractions = {0.5, 1.0};
  const fs::path a = work / "repro_a", b = work / "repro_b";
  fs::remove_all(a);
  fs::remove_all(b);
  pipeline::run_experiment(cfg, a);
  pipeline::run_experiment(cfg, b);
  const auto ref = snapshot(b);
  std::size_t ckpts = 0;
  for (const auto& [name, bytes] : ref) ckpts += name.ends_with(".ckpt");
  std::string first;
  std::size_t diff = count_differences(snapshot(a), ref, first);
  std::string detail = fmt("two runs in separate directories: %zu files (%zu checkpoints), %zu differ", ref.size(),
                           ckpts, diff);
  bool pass = diff == 0 && ckpts > 0;

  // Rerun each stage on its own over the finished run. config.json records the
  // invoked stage list, so it is left out of these comparisons.
  auto stage_ref = ref;
  stage_ref.erase("config.json");
  for (const auto& stage : cfg.stages) {
    pipeline::ExperimentConfig one = cfg;
    one.stages = {stage};
    pipeline::run_experiment(one, a);
    auto now = snapshot(a);
    now.erase("config.json");
    const std::size_t d = count_differences(now, stage_ref, first);
    if (d != 0) detail += fmt("; rerun of %s changes %zu files", stage.c_str(), d);
    pass = pass && d == 0;
  }
  detail += "; every stage rerun individually (config.json excluded)";

  // Eval rerun over the full toy run.
  if (fs::exists(toy_dir / "eval" / "metrics.json")) {
    const auto before = snapshot(toy_dir / "eval");
    pipeline::ExperimentConfig toy = pipeline::ExperimentConfig::toy();
    toy.stages = {"eval"};
    pipeline::run_experiment(toy, toy_dir);
    const std::size_t d = count_differences(snapshot(toy_dir / "eval"), before, first);
    detail += fmt("; toy eval rerun: %zu of %zu eval files differ", d, before.size());
    pass = pass && d == 0;
  } else {
    pass = false;
    detail += "; toy run missing";
  }
  if (!pass && !first.empty()) detail += " (first difference: " + first + ")";
  return {pass, detail};
}

// ----------------------------------------------------------- serialization

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Outcome serialization(const fs::path& work) {
  Rng rng(701);
  ad::Checkpoint ck;
  std::vector<double> f64_vals, f32_vals;
  for (int i = 0; i < 997; ++i) f64_vals.push_back(rng.normal() * std::pow(10.0, rng.uniform(-300, 300)));
  for (int i = 0; i < 300; ++i) f32_vals.push_back(static_cast<float>(rng.normal() * 1e3));
  for (double v : {-0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
                   std::numeric_limits<double>::infinity(), std::numeric_limits<double>::quiet_NaN()}) {
    f64_vals.push_back(v);
  }
  for (float v : {-0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max()}) {
    f32_vals.push_back(v);
  }
  ck.add("block.f64", ad::Tensor::from({f64_vals.size()}, f64_vals), ad::DType::f64);
  ck.add("block.f32", ad::Tensor::from({f32_vals.size() / 3, 3}, f32_vals), ad::DType::f32);
  ck.add("scalar", ad::Tensor::scalar(0.1), ad::DType::f64);
  ck.meta = {{"stage", "acceptance"}, {"seed", 701}};
  const fs::path path = work / "roundtrip.ckpt";
  ck.write(path);
  const ad::Checkpoint back = ad::Checkpoint::read(path);
  bool exact = back.entries().size() == ck.entries().size() && back.meta == ck.meta;
  for (std::size_t i = 0; exact && i < ck.entries().size(); ++i) {
    const auto& x = ck.entries()[i];
    const auto& y = back.entries()[i];
    exact = x.name == y.name && x.dtype == y.dtype && x.shape == y.shape && same_bits(x.values, y.values);
  }
  exact = exact && back.fingerprint() == ck.fingerprint();

  // Rewriting the loaded table gives the same bytes.
  ck.write(work / "roundtrip2.ckpt");
  back.write(work / "roundtrip3.ckpt");
  auto bytes = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  exact = exact && bytes(work / "roundtrip2.ckpt") == bytes(work / "roundtrip3.ckpt");

  std::string corrupted = bytes(path);
  corrupted[0] = 'X';
  std::istringstream is(corrupted);
  bool rejected = false;
  try {
    ad::Checkpoint::read_stream(is);
  } catch (const FormatError&) {
    rejected = true;
  }
  return {exact && rejected, fmt("%zu tensors incl. -0, denormals, inf, nan restored bit-exactly: %s; corrupted "
                                 "magic rejected with FormatError: %s",
                                 ck.entries().size(), exact ? "yes" : "no", rejected ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mfvit_acceptance";
  fs::create_directories(work);
  const auto t0 = Clock::now();

  run_criterion("gradient_suite", gradient_suite);
  run_criterion("enhancement_invariants", enhancement_invariants);
  run_criterion("info_nce_oracle", info_nce_oracle);
  run_criterion("hard_distill_reduces_to_ce", hard_distill_reduction);
  run_criterion("ca_block_structure", ca_structure);
  run_criterion("momentum_schedule", momentum_schedule);
  ToyRun toy;
  try {
    toy_end_to_end(work / "toy", toy);
  } catch (const std::exception& e) {
    report("toy_end_to_end", {false, std::string("exception: ") + e.what()});
  }
  run_criterion("reproducibility", [&] { return reproducibility(work, work / "toy"); });
  run_criterion("serialization", [&] { return serialization(work); });

  std::printf("%s: %d criteria failed, %.1f s total\n", failures == 0 ? "ALL PASS" : "FAILURES", failures,
              seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
