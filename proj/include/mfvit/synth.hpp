#pragma once

#include <cstdint>
#include <filesystem>

#include "mfvit/image.hpp"
#include "mfvit/manifest.hpp"
#include "json.hpp"

namespace mfvit::pipeline {

struct SynthOptions {
  int n_per_class = 20;
  int size = 64;
  double noise = 0.05;
  double stripe_amplitude = 0.3;
  double blob_amplitude = 0.6;
  // Per-image brightness offset and contrast are drawn from these ranges.
  double offset_jitter = 0.1;
  double contrast_jitter = 0.2;
  // Adds a shifted held-out split: n/4, n/4, n images per class with an
  // intensity and contrast change.
  bool test2 = false;
  double test2_offset = 0.12;
  double test2_contrast = 0.75;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthOptions& o);
void from_json(const nlohmann::json& j, SynthOptions& o);

// Class 0: smooth low-frequency gradients. Class 1: mid-frequency oriented
// stripes. Class 2: stripes plus localized Gaussian blobs. Values in [0, 1].
imgproc::Image2D synth_image(int label, std::uint64_t seed, const SynthOptions& opts);

// Writes images/<name>.png and manifest.csv under out_dir; per class
// floor(0.6 n) train, floor(0.2 n) val and the rest test1, two images per
// patient, patients never shared across splits.
RunManifest make_synthetic_dataset(const SynthOptions& opts, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace mfvit::pipeline
