#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "mfvit/augment.hpp"
#include "mfvit/elea.hpp"
#include "mfvit/enhance.hpp"
#include "mfvit/error.hpp"
#include "mfvit/image_io.hpp"
#include "mfvit/phase.hpp"
#include "mfvit/rng.hpp"

using namespace mfvit;
using namespace mfvit::imgproc;

namespace {

Image2D random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image2D im(w, h);
  for (double& v : im.values()) v = rng.uniform();
  return im;
}

double max_abs(const Image2D& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

FilterBankParams small_bank() {
  FilterBankParams p;
  p.base_wavelength = 8.0;
  return p;
}

}  // namespace

TEST_CASE("radial responses are DC free with unit peak") {
  const FilterBank bank = build_filter_bank(64, 32, small_bank());
  REQUIRE(bank.radial.size() == 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(bank.radial_at(s, 0, 0) == 0.0);
    CHECK(*std::max_element(bank.radial[s].begin(), bank.radial[s].end()) == 1.0);
  }
}

TEST_CASE("radial peak of the 512 grid at wavelength 40 sits near radius 12.8") {
  const FilterBank bank = build_filter_bank(512, 512, FilterBankParams{});
  double best = -1.0, best_r = 0.0;
  for (int ky = 0; ky < 512; ++ky) {
    for (int kx = 0; kx < 512; ++kx) {
      const double v = bank.radial_at(0, kx, ky);
      if (v > best) {
        best = v;
        best_r = std::hypot(signed_frequency(kx, 512), signed_frequency(ky, 512));
      }
    }
  }
  CHECK(best_r == doctest::Approx(512.0 / 40.0).epsilon(0.05));
}

TEST_CASE("riesz responses are odd symmetric") {
  const int w = 32, h = 16;
  const FilterBank bank = build_filter_bank(w, h, small_bank());
  CHECK(bank.riesz1[0] == 0.0);
  CHECK(bank.riesz2[0] == 0.0);
  for (int ky = 0; ky < h; ++ky) {
    for (int kx = 0; kx < w; ++kx) {
      const std::size_t i = static_cast<std::size_t>(ky) * w + kx;
      const std::size_t j = static_cast<std::size_t>((h - ky) % h) * w + (w - kx) % w;
      CHECK(bank.riesz1[j] == -bank.riesz1[i]);
      CHECK(bank.riesz2[j] == -bank.riesz2[i]);
    }
  }
}

TEST_CASE("filter bank rejects bad grids and wavelengths") {
  CHECK_THROWS_AS(build_filter_bank(48, 64, FilterBankParams{}), ConfigError);
  FilterBankParams p;
  p.base_wavelength = 1.5;
  CHECK_THROWS_AS(build_filter_bank(64, 64, p), ConfigError);
}

TEST_CASE("constant image has zero responses in every field") {
  const FilterBank bank = build_filter_bank(64, 64, small_bank());
  const auto resp = monogenic_responses(Image2D(64, 64, 0.7), bank);
  for (const auto& s : resp.scales) {
    CHECK(max_abs(s.even) < 1e-12);
    CHECK(max_abs(s.odd1) < 1e-12);
    CHECK(max_abs(s.odd2) < 1e-12);
  }
  const Image2D phase = lwpa(resp);
  for (double v : phase.values()) CHECK(v == 0.5);
  CHECK(max_abs(lpe(resp)) == 0.0);
}

TEST_CASE("monogenic responses ignore a constant offset") {
  const FilterBank bank = build_filter_bank(64, 64, small_bank());
  Image2D im = random_image(64, 64, 3);
  Image2D shifted = im;
  for (double& v : shifted.values()) v += 0.5;
  const auto a = monogenic_responses(im, bank);
  const auto b = monogenic_responses(shifted, bank);
  for (std::size_t s = 0; s < a.scales.size(); ++s) {
    CHECK(max_abs_diff(a.scales[s].even, b.scales[s].even) < 1e-9);
    CHECK(max_abs_diff(a.scales[s].odd1, b.scales[s].odd1) < 1e-9);
    CHECK(max_abs_diff(a.scales[s].odd2, b.scales[s].odd2) < 1e-9);
  }
}

TEST_CASE("monogenic responses reject a grid mismatch") {
  const FilterBank bank = build_filter_bank(64, 64, small_bank());
  CHECK_THROWS_AS(monogenic_responses(Image2D(32, 64), bank), DimensionError);
}

TEST_CASE("cosine at the filter peak yields a quadrature pair") {
  // One scale so the envelope is that of a single bandpass.
  FilterBankParams p;
  p.num_scales = 1;
  p.base_wavelength = 16.0;
  const int n = 128;
  const FilterBank bank = build_filter_bank(n, n, p);
  Image2D im(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) im.at(x, y) = std::cos(2.0 * std::numbers::pi * x / 16.0);
  const auto resp = monogenic_responses(im, bank);
  const auto& s = resp.scales[0];
  CHECK(max_abs(s.odd2) < 1e-9);
  double lo = 1e300, hi = 0.0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double e = std::hypot(s.even.at(x, y), s.odd1.at(x, y));
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  }
  CHECK(hi > 0.5);
  CHECK((hi - lo) / hi < 1e-9);
}

TEST_CASE("lwpa and lpe are invariant to a positive intensity scale") {
  const FilterBank bank = build_filter_bank(64, 64, small_bank());
  const Image2D im = random_image(64, 64, 11);
  for (double c : {0.5, 2.0, 10.0}) {
    Image2D scaled = im;
    for (double& v : scaled.values()) v *= c;
    const auto a = monogenic_responses(im, bank);
    const auto b = monogenic_responses(scaled, bank);
    // Exact up to the phase epsilon, which matters only where the
    // response magnitude is itself near 1e-10.
    CHECK(max_abs_diff(lwpa(a), lwpa(b)) < 1e-6);
    CHECK(max_abs_diff(lpe(a), lpe(b)) < 1e-12);
  }
}

// Rows of the image are identical, so every response is the 1-D analytic
// signal of one row. The reference evaluates it by a direct DFT with the
// filter values recomputed from the response formula.
TEST_CASE("step edge phase matches a direct 1-D DFT reference") {
  const int n = 64;
  const FilterBankParams p = small_bank();
  const FilterBank bank = build_filter_bank(n, n, p);
  std::vector<double> row(n);
  for (int x = 0; x < n; ++x) row[x] = x >= n / 2 ? 1.0 : 0.0;
  Image2D im(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) im.at(x, y) = row[x];
  const Image2D got = lwpa(monogenic_responses(im, bank));

  std::vector<std::complex<double>> spec(n);
  for (int k = 0; k < n; ++k)
    for (int x = 0; x < n; ++x) spec[k] += row[x] * std::polar(1.0, -2.0 * std::numbers::pi * k * x / n);
  std::vector<double> even(n, 0.0), odd(n, 0.0);
  for (int s = 0; s < p.num_scales; ++s) {
    const double peak = 2.0 * std::numbers::pi / (p.base_wavelength * std::pow(p.scale_factor, s));
    double gmax = 0.0;
    for (int ky = 0; ky < n; ++ky)
      for (int kx = 0; kx < n; ++kx) {
        const double om = 2.0 * std::numbers::pi / n * std::hypot(signed_frequency(kx, n), signed_frequency(ky, n));
        gmax = std::max(gmax, assd_response(om, peak, p.alpha));
      }
    for (int x = 0; x < n; ++x) {
      std::complex<double> e = 0.0, o = 0.0;
      for (int k = 0; k < n; ++k) {
        const int f = signed_frequency(k, n);
        const double g = assd_response(2.0 * std::numbers::pi * std::abs(f) / n, peak, p.alpha) / gmax;
        const double sign = (f == 0 || 2 * k == n) ? 0.0 : (f > 0 ? 1.0 : -1.0);
        const auto basis = std::polar(1.0, 2.0 * std::numbers::pi * k * x / n);
        e += spec[k] * g * basis;
        o += spec[k] * g * std::complex<double>(0.0, sign) * basis;
      }
      even[x] += e.real() / n;
      odd[x] += o.real() / n;
    }
  }
  for (int x = 0; x < n; ++x) {
    const double phi = std::atan2(even[x], std::abs(odd[x]) + kPhaseEpsilon);
    const double want = (phi + std::numbers::pi / 2.0) / std::numbers::pi;
    CHECK(got.at(x, 5) == doctest::Approx(want).epsilon(1e-9));
  }
  // An odd feature: the phase at the edge is near zero on the [0, 1] map.
  CHECK(std::abs(got.at(n / 2, 0) - 0.5) < 0.25);
}

TEST_CASE("bright line drives the phase toward its upper limit") {
  const int n = 64;
  const FilterBank bank = build_filter_bank(n, n, small_bank());
  Image2D im(n, n);
  for (int y = 0; y < n; ++y) im.at(n / 2, y) = 1.0;
  const Image2D got = lwpa(monogenic_responses(im, bank));
  CHECK(got.at(n / 2, 7) > 0.99);
}

TEST_CASE("lpe peaks at the center of a symmetric blob") {
  const int n = 64;
  const FilterBank bank = build_filter_bank(n, n, small_bank());
  Image2D im(n, n);
  const int cx = 23, cy = 37;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) im.at(x, y) = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 18.0);
  const Image2D e = lpe(monogenic_responses(im, bank));
  const auto it = std::max_element(e.values().begin(), e.values().end());
  const auto idx = static_cast<int>(it - e.values().begin());
  CHECK(idx % n == cx);
  CHECK(idx / n == cy);
  CHECK(*it == 1.0);
}

TEST_CASE("soft threshold values") {
  CHECK(soft_threshold(0.5, 0.2) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(soft_threshold(-0.1, 0.2) == 0.0);
  CHECK(soft_threshold(-0.5, 0.2) == doctest::Approx(-0.3).epsilon(1e-15));
}

TEST_CASE("elea of a constant image is that constant") {
  const Image2D out = elea(Image2D(32, 32, 0.35), EleaParams{});
  for (double v : out.values()) CHECK(v == doctest::Approx(0.35).epsilon(1e-12));
}

TEST_CASE("elea objective is non-increasing over inner alternations") {
  const Image2D a0 = random_image(64, 64, 21);
  EleaParams p;
  p.max_inner_iters = 5;
  EleaTrace trace;
  const Image2D out = elea(a0, p, &trace);
  REQUIRE(trace.iterations.size() > 5);
  int checked = 0;
  for (std::size_t i = 1; i < trace.iterations.size(); ++i) {
    const auto& prev = trace.iterations[i - 1];
    const auto& cur = trace.iterations[i];
    if (cur.beta != prev.beta) continue;
    CHECK(cur.objective <= prev.objective * (1.0 + 1e-9));
    ++checked;
  }
  CHECK(checked == static_cast<int>(trace.iterations.size()) - 6);
  CHECK(out.min_value() >= 0.0);
  CHECK(out.max_value() <= 1.0);
  CHECK(elea(a0, p) == out);
}

TEST_CASE("traced elea objective matches an explicit evaluation over all kernels") {
  const Image2D a0 = random_image(32, 32, 22);
  EleaParams p;
  p.beta0 = p.beta_max = 4.0;
  p.max_inner_iters = 1;
  EleaTrace trace;
  const Image2D a1 = elea(a0, p, &trace);
  REQUIRE(trace.iterations.size() == 1);
  REQUIRE(a1.min_value() > 0.0);
  REQUIRE(a1.max_value() < 1.0);

  const int n = 32;
  auto at = [n](const Image2D& im, int x, int y) { return im.at(((x % n) + n) % n, ((y % n) + n) % n); };
  double fidelity = 0.0, l1 = 0.0, coupling = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) fidelity += (a1.at(x, y) - a0.at(x, y)) * (a1.at(x, y) - a0.at(x, y));
  for (const auto& k : default_difference_kernels())
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double d0 = a0.at(x, y) - at(a0, x + k.dx, y + k.dy);
        const double wgt = std::exp(-std::abs(d0));
        const double u = soft_threshold(d0, wgt / p.beta0);
        const double r = u - (a1.at(x, y) - at(a1, x + k.dx, y + k.dy));
        l1 += wgt * std::abs(u);
        coupling += r * r;
      }
  const double expected = 0.5 * p.rho * fidelity + l1 + 0.5 * p.beta0 * coupling;
  CHECK(std::abs(trace.iterations[0].objective - expected) < 1e-12 * expected);
}

TEST_CASE("elea smooths while staying close to its input") {
  const Image2D a0 = random_image(64, 64, 5);
  const Image2D out = elea(a0, EleaParams{});
  CHECK(elea_objective(out, a0, EleaParams{}) < elea_objective(a0, a0, EleaParams{}));
}

TEST_CASE("elea validates its parameters and input range") {
  EleaParams p;
  p.rho = 0.0;
  CHECK_THROWS_AS(elea(Image2D(16, 16), p), ConfigError);
  p = EleaParams{};
  p.beta_rate = 1.0;
  CHECK_THROWS_AS(elea(Image2D(16, 16), p), ConfigError);
  CHECK_THROWS_AS(elea(Image2D(16, 16, 1.5), EleaParams{}), ContractError);
}

TEST_CASE("mf_combine is the equal-weight mean") {
  const Image2D x = random_image(8, 8, 9);
  CHECK(max_abs_diff(mf_combine(x, x, x), x) < 1e-15);
  CHECK(mf_combine(Image2D(4, 4, 0.0), Image2D(4, 4, 0.0), Image2D(4, 4, 0.0)).max_value() == 0.0);
  CHECK(mf_combine(Image2D(4, 4, 1.0), Image2D(4, 4, 1.0), Image2D(4, 4, 1.0)).min_value() == 1.0);
  const Image2D a = random_image(8, 8, 1), b = random_image(8, 8, 2), c = random_image(8, 8, 3);
  CHECK(mf_combine(a, b, c) == mf_combine(a, b, c));
  CHECK_THROWS_AS(mf_combine(a, b, Image2D(4, 8)), DimensionError);
}

TEST_CASE("enhancer outputs lie in the unit interval on the working grid") {
  EnhanceConfig cfg;
  cfg.grid = 64;
  cfg.bank.base_wavelength = 6.0;
  const Enhancer enh(cfg);
  const auto f = enh.run(random_image(50, 70, 4));
  for (const Image2D* im : {&f.lwpa, &f.lpe, &f.elea, &f.mf}) {
    CHECK(im->width() == 64);
    CHECK(im->height() == 64);
    CHECK(im->min_value() >= 0.0);
    CHECK(im->max_value() <= 1.0);
  }
}

TEST_CASE("augment identity, flip involution and determinism") {
  const Image2D im = random_image(32, 32, 8);
  AugmentConfig id;
  id.resize_to = 32;
  id.max_rotation = 0.0;
  id.hflip_prob = 0.0;
  CHECK(augment(im, 99, id) == im);

  AugmentConfig flip = id;
  flip.hflip_prob = 1.0;
  CHECK(flip_horizontal(augment(im, 5, flip)) == im);
  CHECK(augment(augment(im, 5, flip), 6, flip) == im);

  AugmentConfig full;
  full.resize_to = 24;
  CHECK(augment(im, 42, full) == augment(im, 42, full));
  CHECK(augment(im, 42, full).width() == 24);
  full.resize_to = 4;
  CHECK_THROWS_AS(augment(im, 1, full), ConfigError);
}

TEST_CASE("rotation by zero degrees is the identity") {
  const Image2D im = random_image(17, 11, 2);
  CHECK(max_abs_diff(rotate(im, 0.0), im) < 1e-12);
}

TEST_CASE("img2 and png round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "mfvit_imgproc_io";
  std::filesystem::create_directories(dir);
  Image2D im = random_image(13, 7, 6);
  for (double& v : im.values()) v = static_cast<float>(v);
  save_img2(im, dir / "a.img2");
  CHECK(load_img2(dir / "a.img2") == im);
  CHECK(load_image(dir / "a.img2") == im);

  save_png(im, dir / "a.png");
  const Image2D png = load_image(dir / "a.png");
  CHECK(png.width() == 13);
  CHECK(max_abs_diff(png, im) <= 0.5 / 255.0 + 1e-12);

  std::filesystem::resize_file(dir / "a.img2", 20);
  CHECK_THROWS_AS(load_img2(dir / "a.img2"), FormatError);
  std::filesystem::remove_all(dir);
}
