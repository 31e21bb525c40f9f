#include "mfvit/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "mfvit/error.hpp"
#include "mfvit/image_io.hpp"
#include "mfvit/rng.hpp"

namespace mfvit::pipeline {

void SynthOptions::validate() const {
  if (n_per_class < 4) throw ConfigError("synthetic dataset needs n_per_class >= 4");
  if (size < 8) throw ConfigError("synthetic image size must be >= 8");
  if (noise < 0.0) throw ConfigError("synthetic noise must be >= 0");
}

void to_json(nlohmann::json& j, const SynthOptions& o) {
  j = {{"n_per_class", o.n_per_class},       {"size", o.size},
       {"noise", o.noise},                   {"stripe_amplitude", o.stripe_amplitude},
       {"blob_amplitude", o.blob_amplitude}, {"offset_jitter", o.offset_jitter},
       {"contrast_jitter", o.contrast_jitter}, {"test2", o.test2},
       {"test2_offset", o.test2_offset},     {"test2_contrast", o.test2_contrast}};
}

void from_json(const nlohmann::json& j, SynthOptions& o) {
  o.n_per_class = j.value("n_per_class", o.n_per_class);
  o.size = j.value("size", o.size);
  o.noise = j.value("noise", o.noise);
  o.stripe_amplitude = j.value("stripe_amplitude", o.stripe_amplitude);
  o.blob_amplitude = j.value("blob_amplitude", o.blob_amplitude);
  o.offset_jitter = j.value("offset_jitter", o.offset_jitter);
  o.contrast_jitter = j.value("contrast_jitter", o.contrast_jitter);
  o.test2 = j.value("test2", o.test2);
  o.test2_offset = j.value("test2_offset", o.test2_offset);
  o.test2_contrast = j.value("test2_contrast", o.test2_contrast);
}

imgproc::Image2D synth_image(int label, std::uint64_t seed, const SynthOptions& opts) {
  if (label < 0 || label >= kNumClasses) throw IndexError("synthetic label out of range");
  constexpr double kPi = std::numbers::pi;
  Rng rng(seed);
  const int s = opts.size;
  const double offset = 0.5 + rng.uniform(-opts.offset_jitter, opts.offset_jitter);
  const double contrast = 1.0 + rng.uniform(-opts.contrast_jitter, opts.contrast_jitter);

  // Smooth background shared by all classes.
  const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  const double bump_f = rng.uniform(0.5, 1.5), bump_phase = rng.uniform(0.0, 2.0 * kPi);
  const double bump_amp = label == 0 ? 0.2 : 0.08;

  const double theta = rng.uniform(0.0, kPi);
  const double wavelength = rng.uniform(10.0, 16.0) * s / 64.0;
  const double stripe_phase = rng.uniform(0.0, 2.0 * kPi);

  struct Blob {
    double x, y, sigma, amp;
  };
  std::vector<Blob> blobs;
  if (label == 2) {
    const int count = 2 + static_cast<int>(rng.below(2));
    for (int i = 0; i < count; ++i) {
      blobs.push_back({rng.uniform(0.2, 0.8) * s, rng.uniform(0.2, 0.8) * s, rng.uniform(4.0, 6.0) * s / 64.0,
                       opts.blob_amplitude * (rng.bernoulli(0.5) ? 1.0 : -1.0)});
    }
  }

  imgproc::Image2D img(s, s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double u = (x + 0.5) / s - 0.5, v = (y + 0.5) / s - 0.5;
      double val = gx * u + gy * v + bump_amp * std::sin(2.0 * kPi * bump_f * (u + 0.6 * v) + bump_phase);
      if (label >= 1) {
        const double t = std::cos(theta) * x + std::sin(theta) * y;
        val += opts.stripe_amplitude * std::sin(2.0 * kPi * t / wavelength + stripe_phase);
      }
      for (const auto& b : blobs) {
        const double dx = x - b.x, dy = y - b.y;
        val += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      img.at(x, y) = val;
    }
  }
  for (double& v : img.data()) {
    v = offset + contrast * v + opts.noise * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

RunManifest make_synthetic_dataset(const SynthOptions& opts, std::uint64_t seed, const std::filesystem::path& out_dir) {
  opts.validate();
  std::filesystem::create_directories(out_dir / "images");
  RunManifest m;
  m.base_dir = out_dir;
  int image_index = 0;
  int patient_index = 0;
  auto emit = [&](int label, Split split, const imgproc::Image2D& img, const std::string& patient) {
    char name[64];
    std::snprintf(name, sizeof name, "images/img_%05d.png", image_index);
    imgproc::save_png(img, out_dir / name);
    m.rows.push_back({name, label, patient, split});
  };

  const int n = opts.n_per_class;
  const int n_train = static_cast<int>(std::floor(0.6 * n));
  const int n_val = static_cast<int>(std::floor(0.2 * n));
  for (int label = 0; label < kNumClasses; ++label) {
    for (int i = 0; i < n; ++i) {
      const Split split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test1);
      const int first_in_split = split == Split::train ? 0 : (split == Split::val ? n_train : n_train + n_val);
      // Two consecutive images of one split form a patient.
      if ((i - first_in_split) % 2 == 0) ++patient_index;
      const std::string patient = "p" + std::to_string(patient_index);
      emit(label, split, synth_image(label, mix_seed(seed, static_cast<std::uint64_t>(image_index)), opts), patient);
      ++image_index;
    }
  }
  if (opts.test2) {
    const int counts[kNumClasses] = {std::max(1, n / 4), std::max(1, n / 4), n};
    for (int label = 0; label < kNumClasses; ++label) {
      for (int i = 0; i < counts[label]; ++i) {
        if (i % 2 == 0) ++patient_index;
        imgproc::Image2D img = synth_image(label, mix_seed(seed, static_cast<std::uint64_t>(image_index)), opts);
        for (double& v : img.data()) v = std::clamp(opts.test2_offset + opts.test2_contrast * v, 0.0, 1.0);
        emit(label, Split::test2, img, "q" + std::to_string(patient_index));
        ++image_index;
      }
    }
  }
  m.validate();
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace mfvit::pipeline
