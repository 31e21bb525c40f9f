#include "mfvit/augment.hpp"

#include <cmath>
#include <numbers>

#include "mfvit/error.hpp"
#include "mfvit/rng.hpp"

namespace mfvit::imgproc {

void AugmentConfig::validate() const {
  if (resize_to < 8) throw ConfigError("augment resize_to must be >= 8");
  if (!(max_rotation >= 0.0)) throw ConfigError("augment max_rotation must be >= 0");
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) {
    throw ConfigError("augment hflip_prob must lie in [0, 1]");
  }
}

Image2D rotate(const Image2D& src, double degrees) {
  if (degrees == 0.0) return src;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double cx = 0.5 * (src.width() - 1);
  const double cy = 0.5 * (src.height() - 1);
  Image2D out(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y) {
    const double ry = y - cy;
    for (int x = 0; x < src.width(); ++x) {
      const double rx = x - cx;
      // Inverse map: destination pixel pulls from the source rotated by -theta.
      const double sx = c * rx + s * ry + cx;
      const double sy = -s * rx + c * ry + cy;
      out.at(x, y) = sample_bilinear(src, sx, sy);
    }
  }
  return out;
}

Image2D augment(const Image2D& image, std::uint64_t seed, const AugmentConfig& cfg) {
  cfg.validate();
  if (image.empty()) throw DimensionError("augment of empty image");
  Rng rng(seed);
  // Both draws are always consumed so the stream layout does not depend on cfg.
  const double angle_draw = rng.uniform(-1.0, 1.0);
  const bool flip = rng.bernoulli(cfg.hflip_prob);

  Image2D out = resize_bilinear(image, cfg.resize_to, cfg.resize_to);
  if (cfg.max_rotation > 0.0) out = rotate(out, angle_draw * cfg.max_rotation);
  if (flip) out = flip_horizontal(out);
  return out;
}

}  // namespace mfvit::imgproc
