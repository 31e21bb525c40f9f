#include "mfvit/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfvit/error.hpp"

namespace mfvit::imgproc {

Image2D::Image2D(int width, int height, double fill)
    : width_(width), height_(height) {
  if (width < 0 || height < 0) throw DimensionError("negative image size");
  data_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image2D::Image2D(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 0 || height < 0) throw DimensionError("negative image size");
  if (data_.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionError("image data length " + std::to_string(data_.size()) +
                         " != " + std::to_string(width) + "x" + std::to_string(height));
  }
}

bool Image2D::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Image2D::min_value() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Image2D::max_value() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

void require_same_grid(const Image2D& a, const Image2D& b, const char* what) {
  if (!a.same_grid(b)) {
    throw DimensionError(std::string(what) + ": grid " + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                         "x" + std::to_string(b.height()));
  }
}

double max_abs_diff(const Image2D& a, const Image2D& b) {
  require_same_grid(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double sample_bilinear(const Image2D& src, double x, double y) {
  const int w = src.width();
  const int h = src.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  if (fx == 0.0 && fy == 0.0) return src.at(x0, y0);
  const double top = src.at(x0, y0) * (1.0 - fx) + src.at(x1, y0) * fx;
  const double bottom = src.at(x0, y1) * (1.0 - fx) + src.at(x1, y1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

Image2D resize_bilinear(const Image2D& src, int width, int height) {
  if (src.empty()) throw DimensionError("resize of empty image");
  if (width <= 0 || height <= 0) throw DimensionError("resize to non-positive size");
  if (width == src.width() && height == src.height()) return src;
  Image2D out(width, height);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double yy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < width; ++x) {
      out.at(x, y) = sample_bilinear(src, (x + 0.5) * sx - 0.5, yy);
    }
  }
  return out;
}

Image2D flip_horizontal(const Image2D& src) {
  Image2D out(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) out.at(x, y) = src.at(src.width() - 1 - x, y);
  }
  return out;
}

}  // namespace mfvit::imgproc
