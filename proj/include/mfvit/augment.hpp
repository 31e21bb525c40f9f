#pragma once

#include <cstdint>

#include "mfvit/image.hpp"

namespace mfvit::imgproc {

struct AugmentConfig {
  int resize_to = 224;
  double max_rotation = 10.0;  // degrees
  double hflip_prob = 0.5;

  void validate() const;
};

// Rotation about the image center by `degrees` (counter-clockwise), bilinear
// sampling, out-of-range samples clamped to the nearest edge pixel.
Image2D rotate(const Image2D& src, double degrees);

// Resize -> random rotation -> random horizontal flip; a pure function of
// (image, seed, cfg).
Image2D augment(const Image2D& image, std::uint64_t seed, const AugmentConfig& cfg);

}  // namespace mfvit::imgproc
