#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace mfvit::imgproc {

using Spectrum = std::vector<std::complex<double>>;

constexpr bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

class RealFft2D;

// FFTW-aligned real and spectrum buffers for transforms that run in place,
// without copies. One workspace per thread.
class FftWorkspace {
 public:
  explicit FftWorkspace(const RealFft2D& fft);
  ~FftWorkspace();
  FftWorkspace(const FftWorkspace&) = delete;
  FftWorkspace& operator=(const FftWorkspace&) = delete;

  std::span<double> real() { return {real_, real_size_}; }
  std::span<std::complex<double>> spectrum() { return {spectrum_, spectrum_size_}; }

 private:
  double* real_;
  std::complex<double>* spectrum_;
  std::size_t real_size_;
  std::size_t spectrum_size_;
};

// Real-to-complex 2-D transform on a fixed grid, backed by FFTW.
//
// Spectra use the half-plane layout: height rows of (width/2 + 1) bins, the
// row index following FFT order (k < height/2 is +k, otherwise k - height).
// Plans are created once and are immutable; forward()/inverse() may be
// called concurrently from several threads.
class RealFft2D {
 public:
  RealFft2D(int width, int height);
  ~RealFft2D();
  RealFft2D(const RealFft2D&) = delete;
  RealFft2D& operator=(const RealFft2D&) = delete;

  int width() const { return width_; }
  int height() const { return height_; }
  int half_width() const { return width_ / 2 + 1; }
  std::size_t spectrum_size() const {
    return static_cast<std::size_t>(height_) * half_width();
  }

  Spectrum forward(std::span<const double> image) const;
  // Normalized inverse: inverse(forward(x)) == x up to rounding.
  std::vector<double> inverse(std::span<const std::complex<double>> spectrum) const;
  // Same transforms writing into caller-owned storage.
  void forward_into(std::span<const double> image, Spectrum& out) const;
  void inverse_into(std::span<const std::complex<double>> spectrum, std::vector<double>& out) const;
  // ws.real() -> ws.spectrum().
  void forward(FftWorkspace& ws) const;
  // ws.spectrum() -> ws.real() without the 1/(width*height) factor; the
  // spectrum is overwritten.
  void inverse_unscaled(FftWorkspace& ws) const;

 private:
  void check_workspace(FftWorkspace& ws) const;

  int width_;
  int height_;
  struct Plans;
  std::unique_ptr<Plans> plans_;
};

// Shared, cached transform for a grid.
std::shared_ptr<const RealFft2D> fft_for_grid(int width, int height);

}  // namespace mfvit::imgproc
