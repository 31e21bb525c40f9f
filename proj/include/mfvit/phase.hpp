#pragma once

#include <memory>
#include <vector>

#include "mfvit/fft.hpp"
#include "mfvit/image.hpp"

namespace mfvit::imgproc {

struct FilterBankParams {
  int num_scales = 3;
  double base_wavelength = 40.0;  // pixels, scale 0
  double scale_factor = 2.0;      // wavelength ratio between consecutive scales
  double alpha = 2.0;             // exponent of the alpha-scale-space family
};

// Frequency-plane responses on a full (height x width) grid in FFT order:
// entry (ky, kx) holds the response at frequency (kx', ky') where
// k' = k for k < n/2 and k - n otherwise.
struct FilterBank {
  int width = 0;
  int height = 0;
  FilterBankParams params;
  std::vector<std::vector<double>> radial;  // one per scale, real, unit peak, zero at DC
  std::vector<double> riesz1;               // imaginary part of i*u/|w|
  std::vector<double> riesz2;               // imaginary part of i*v/|w|
  std::shared_ptr<const RealFft2D> fft;

  double radial_at(int scale, int kx, int ky) const {
    return radial[scale][static_cast<std::size_t>(ky) * width + kx];
  }
};

// Signed frequency index of FFT bin k on an n-point axis.
constexpr int signed_frequency(int k, int n) { return k < n / 2 ? k : k - n; }

// Radial response of the ASSD family at angular frequency w (rad/pixel),
// before grid normalization: x * exp(1 - x) with x = sigma * w^alpha, whose
// continuous maximum is 1 at w = peak.
double assd_response(double omega, double peak_omega, double alpha);

FilterBank build_filter_bank(int width, int height, const FilterBankParams& params);

struct ScaleResponse {
  Image2D even;
  Image2D odd1;
  Image2D odd2;
};

struct MonogenicResponses {
  std::vector<ScaleResponse> scales;
};

MonogenicResponses monogenic_responses(const Image2D& image, const FilterBank& bank);

inline constexpr double kPhaseEpsilon = 1e-10;

// Local weighted mean phase angle, mapped from (-pi/2, pi/2) to [0, 1].
Image2D lwpa(const MonogenicResponses& resp);

// Local phase energy, normalized to unit maximum.
Image2D lpe(const MonogenicResponses& resp);

// Equal-weight combination of the three feature images.
Image2D mf_combine(const Image2D& lwpa_img, const Image2D& lpe_img, const Image2D& elea_img);

}  // namespace mfvit::imgproc
