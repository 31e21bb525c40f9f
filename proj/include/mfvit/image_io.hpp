#pragma once

#include <filesystem>

#include "mfvit/image.hpp"

namespace mfvit::imgproc {

// Loads 8/16-bit grayscale PNG, binary/ASCII PGM, or IMG2 raw float images.
// PNG and PGM intensities are normalized to [0, 1]; colour PNGs are reduced
// to luma. Dispatch is by file signature, not extension.
Image2D load_image(const std::filesystem::path& path);

// 8-bit grayscale PNG; values are clamped to [0, 1] before quantization.
void save_png(const Image2D& image, const std::filesystem::path& path);

// Raw IMG2: magic "IMG2", u32 width, u32 height, u32 reserved (0), then
// width*height little-endian float32 values, row-major.
void save_img2(const Image2D& image, const std::filesystem::path& path);
Image2D load_img2(const std::filesystem::path& path);

void save_pgm(const Image2D& image, const std::filesystem::path& path);

}  // namespace mfvit::imgproc
