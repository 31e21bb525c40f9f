#pragma once

#include <span>
#include <vector>

namespace mfvit::imgproc {

// Single-channel real image, row-major, typically normalized to [0, 1].
class Image2D {
 public:
  Image2D() = default;
  Image2D(int width, int height, double fill = 0.0);
  Image2D(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_grid(const Image2D& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }
  bool all_finite() const;
  double min_value() const;
  double max_value() const;

  bool operator==(const Image2D&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Throws DimensionError unless both images share a grid.
void require_same_grid(const Image2D& a, const Image2D& b, const char* what);

double max_abs_diff(const Image2D& a, const Image2D& b);

// Bilinear resampling with pixel-center alignment and edge clamping. A
// resize to the source size is the identity.
Image2D resize_bilinear(const Image2D& src, int width, int height);

// Bilinear sample at a fractional position, clamped to the border.
double sample_bilinear(const Image2D& src, double x, double y);

Image2D flip_horizontal(const Image2D& src);

}  // namespace mfvit::imgproc
