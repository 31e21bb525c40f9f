#include "mfvit/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>

#include "mfvit/error.hpp"

namespace mfvit::imgproc {

namespace {

// The FFTW planner is not thread-safe; execution with new arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <class T>
struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : ptr(static_cast<T*>(fftw_malloc(sizeof(T) * n))) {
    if (!ptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  T* ptr;
};

}  // namespace

struct RealFft2D::Plans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
};

RealFft2D::RealFft2D(int width, int height)
    : width_(width), height_(height), plans_(std::make_unique<Plans>()) {
  if (width <= 0 || height <= 0) throw DimensionError("fft grid must be positive");
  FftwBuffer<double> real(static_cast<std::size_t>(width) * height);
  FftwBuffer<fftw_complex> cplx(spectrum_size());
  std::lock_guard lock(planner_mutex());
  plans_->r2c = fftw_plan_dft_r2c_2d(height, width, real.ptr, cplx.ptr, FFTW_ESTIMATE);
  plans_->c2r = fftw_plan_dft_c2r_2d(height, width, cplx.ptr, real.ptr, FFTW_ESTIMATE);
  if (!plans_->r2c || !plans_->c2r) throw ConfigError("FFTW failed to create a plan");
}

RealFft2D::~RealFft2D() {
  std::lock_guard lock(planner_mutex());
  if (plans_->r2c) fftw_destroy_plan(plans_->r2c);
  if (plans_->c2r) fftw_destroy_plan(plans_->c2r);
}

namespace {

// Per-thread FFTW-aligned scratch, grown on demand.
template <class T>
T* scratch(std::size_t n) {
  thread_local std::unique_ptr<FftwBuffer<T>> buf;
  thread_local std::size_t cap = 0;
  if (cap < n) {
    buf = std::make_unique<FftwBuffer<T>>(n);
    cap = n;
  }
  return buf->ptr;
}

}  // namespace

Spectrum RealFft2D::forward(std::span<const double> image) const {
  Spectrum result;
  forward_into(image, result);
  return result;
}

void RealFft2D::forward_into(std::span<const double> image, Spectrum& result) const {
  const std::size_t n = static_cast<std::size_t>(width_) * height_;
  if (image.size() != n) throw DimensionError("fft input size mismatch");
  double* in = scratch<double>(n);
  fftw_complex* out = scratch<fftw_complex>(spectrum_size());
  std::copy(image.begin(), image.end(), in);
  fftw_execute_dft_r2c(plans_->r2c, in, out);
  result.resize(spectrum_size());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = {out[i][0], out[i][1]};
}

std::vector<double> RealFft2D::inverse(std::span<const std::complex<double>> spectrum) const {
  std::vector<double> result;
  inverse_into(spectrum, result);
  return result;
}

void RealFft2D::inverse_into(std::span<const std::complex<double>> spectrum, std::vector<double>& result) const {
  if (spectrum.size() != spectrum_size()) throw DimensionError("ifft input size mismatch");
  const std::size_t n = static_cast<std::size_t>(width_) * height_;
  fftw_complex* in = scratch<fftw_complex>(spectrum_size());
  double* out = scratch<double>(n);
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    in[i][0] = spectrum[i].real();
    in[i][1] = spectrum[i].imag();
  }
  // c2r destroys its input; the scratch copy absorbs that.
  fftw_execute_dft_c2r(plans_->c2r, in, out);
  const double scale = 1.0 / static_cast<double>(n);
  result.resize(n);
  for (std::size_t i = 0; i < n; ++i) result[i] = out[i] * scale;
}

FftWorkspace::FftWorkspace(const RealFft2D& fft)
    : real_size_(static_cast<std::size_t>(fft.width()) * fft.height()), spectrum_size_(fft.spectrum_size()) {
  real_ = fftw_alloc_real(real_size_);
  spectrum_ = reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(spectrum_size_));
  if (!real_ || !spectrum_) {
    fftw_free(real_);
    fftw_free(spectrum_);
    throw std::bad_alloc();
  }
}

FftWorkspace::~FftWorkspace() {
  fftw_free(real_);
  fftw_free(spectrum_);
}

void RealFft2D::check_workspace(FftWorkspace& ws) const {
  if (ws.real().size() != static_cast<std::size_t>(width_) * height_ || ws.spectrum().size() != spectrum_size()) {
    throw DimensionError("fft workspace size mismatch");
  }
}

void RealFft2D::forward(FftWorkspace& ws) const {
  check_workspace(ws);
  fftw_execute_dft_r2c(plans_->r2c, ws.real().data(), reinterpret_cast<fftw_complex*>(ws.spectrum().data()));
}

void RealFft2D::inverse_unscaled(FftWorkspace& ws) const {
  check_workspace(ws);
  fftw_execute_dft_c2r(plans_->c2r, reinterpret_cast<fftw_complex*>(ws.spectrum().data()), ws.real().data());
}

std::shared_ptr<const RealFft2D> fft_for_grid(int width, int height) {
  static std::mutex cache_mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const RealFft2D>> cache;
  std::lock_guard lock(cache_mutex);
  auto& slot = cache[{width, height}];
  if (!slot) slot = std::make_shared<RealFft2D>(width, height);
  return slot;
}

}  // namespace mfvit::imgproc
