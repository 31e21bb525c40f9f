#include "mfvit/phase.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mfvit/error.hpp"

namespace mfvit::imgproc {

double assd_response(double omega, double peak_omega, double alpha) {
  if (omega <= 0.0) return 0.0;
  // sigma places the maximum of sigma*alpha*w^a*exp(-sigma*w^a) at peak_omega.
  const double sigma = std::pow(peak_omega, -alpha);
  const double x = sigma * std::pow(omega, alpha);
  return x * std::exp(1.0 - x);
}

FilterBank build_filter_bank(int width, int height, const FilterBankParams& params) {
  if (!is_power_of_two(width) || !is_power_of_two(height)) {
    throw ConfigError("filter bank grid " + std::to_string(width) + "x" + std::to_string(height) +
                      " is not a power of two");
  }
  if (params.num_scales < 1) throw ConfigError("num_scales must be >= 1");
  if (!(params.base_wavelength >= 2.0)) {
    throw ConfigError("base_wavelength " + std::to_string(params.base_wavelength) +
                      " is beyond the Nyquist limit (< 2 px)");
  }
  if (!(params.scale_factor > 0.0)) throw ConfigError("scale_factor must be positive");
  if (!(params.alpha > 0.0)) throw ConfigError("alpha must be positive");

  FilterBank bank;
  bank.width = width;
  bank.height = height;
  bank.params = params;
  bank.fft = fft_for_grid(width, height);

  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> omega(n);
  bank.riesz1.assign(n, 0.0);
  bank.riesz2.assign(n, 0.0);
  for (int ky = 0; ky < height; ++ky) {
    const int fy = signed_frequency(ky, height);
    const double v = 2.0 * std::numbers::pi * fy / height;
    for (int kx = 0; kx < width; ++kx) {
      const int fx = signed_frequency(kx, width);
      const double u = 2.0 * std::numbers::pi * fx / width;
      const std::size_t i = static_cast<std::size_t>(ky) * width + kx;
      omega[i] = std::hypot(u, v);
      if (omega[i] == 0.0) continue;
      // The Nyquist row/column is its own mirror image, so an odd response
      // must vanish there.
      if (2 * kx != width) bank.riesz1[i] = u / omega[i];
      if (2 * ky != height) bank.riesz2[i] = v / omega[i];
    }
  }

  for (int s = 0; s < params.num_scales; ++s) {
    const double wavelength = params.base_wavelength * std::pow(params.scale_factor, s);
    if (wavelength < 2.0) {
      throw ConfigError("scale " + std::to_string(s) + " wavelength is beyond the Nyquist limit");
    }
    const double peak = 2.0 * std::numbers::pi / wavelength;
    std::vector<double> g(n);
    double gmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = assd_response(omega[i], peak, params.alpha);
      gmax = std::max(gmax, g[i]);
    }
    if (!(gmax > 0.0)) throw ConfigError("radial response vanishes on the grid");
    for (double& x : g) x /= gmax;
    bank.radial.push_back(std::move(g));
  }
  return bank;
}

MonogenicResponses monogenic_responses(const Image2D& image, const FilterBank& bank) {
  if (image.width() != bank.width || image.height() != bank.height) {
    throw DimensionError("image grid " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) + " does not match filter bank grid " +
                         std::to_string(bank.width) + "x" + std::to_string(bank.height));
  }
  if (!image.all_finite()) throw NumericError("monogenic_responses: non-finite input");

  const RealFft2D& fft = *bank.fft;
  const Spectrum spectrum = fft.forward(image.data());
  const int hw = fft.half_width();
  const int w = bank.width;
  const int h = bank.height;

  MonogenicResponses out;
  out.scales.reserve(bank.radial.size());
  Spectrum even(spectrum.size()), odd1(spectrum.size()), odd2(spectrum.size());
  for (const auto& g : bank.radial) {
    for (int ky = 0; ky < h; ++ky) {
      for (int kx = 0; kx < hw; ++kx) {
        const std::size_t hi = static_cast<std::size_t>(ky) * hw + kx;
        const std::size_t fi = static_cast<std::size_t>(ky) * w + kx;
        const std::complex<double> band = spectrum[hi] * g[fi];
        even[hi] = band;
        // Multiplication by i*r: (a + ib) * i*r = -b*r + i*a*r.
        odd1[hi] = {-band.imag() * bank.riesz1[fi], band.real() * bank.riesz1[fi]};
        odd2[hi] = {-band.imag() * bank.riesz2[fi], band.real() * bank.riesz2[fi]};
      }
    }
    out.scales.push_back({Image2D(w, h, fft.inverse(even)), Image2D(w, h, fft.inverse(odd1)),
                          Image2D(w, h, fft.inverse(odd2))});
  }
  return out;
}

namespace {

void require_nonempty(const MonogenicResponses& resp, const char* what) {
  if (resp.scales.empty()) throw ConfigError(std::string(what) + ": empty response set");
}

}  // namespace

Image2D lwpa(const MonogenicResponses& resp) {
  require_nonempty(resp, "lwpa");
  const Image2D& ref = resp.scales.front().even;
  const std::size_t n = ref.size();
  std::vector<double> se(n, 0.0), so1(n, 0.0), so2(n, 0.0);
  for (const auto& s : resp.scales) {
    for (std::size_t i = 0; i < n; ++i) {
      se[i] += s.even.data()[i];
      so1[i] += s.odd1.data()[i];
      so2[i] += s.odd2.data()[i];
    }
  }
  Image2D out(ref.width(), ref.height());
  for (std::size_t i = 0; i < n; ++i) {
    const double phi = std::atan2(se[i], std::sqrt(so1[i] * so1[i] + so2[i] * so2[i]) + kPhaseEpsilon);
    out.data()[i] = (phi + std::numbers::pi / 2.0) / std::numbers::pi;
  }
  return out;
}

Image2D lpe(const MonogenicResponses& resp) {
  require_nonempty(resp, "lpe");
  const Image2D& ref = resp.scales.front().even;
  const std::size_t n = ref.size();
  std::vector<double> raw(n, 0.0);
  for (const auto& s : resp.scales) {
    for (std::size_t i = 0; i < n; ++i) {
      const double o1 = s.odd1.data()[i];
      const double o2 = s.odd2.data()[i];
      raw[i] += std::abs(s.even.data()[i]) - std::sqrt(o1 * o1 + o2 * o2);
    }
  }
  double peak = 0.0;
  for (double& r : raw) {
    r = std::max(0.0, r);
    peak = std::max(peak, r);
  }
  if (peak > 0.0) {
    for (double& r : raw) r /= peak;
  }
  return Image2D(ref.width(), ref.height(), std::move(raw));
}

Image2D mf_combine(const Image2D& lwpa_img, const Image2D& lpe_img, const Image2D& elea_img) {
  require_same_grid(lwpa_img, lpe_img, "mf_combine");
  require_same_grid(lwpa_img, elea_img, "mf_combine");
  Image2D out(lwpa_img.width(), lwpa_img.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = (lwpa_img.data()[i] + lpe_img.data()[i] + elea_img.data()[i]) / 3.0;
  }
  return out;
}

}  // namespace mfvit::imgproc
