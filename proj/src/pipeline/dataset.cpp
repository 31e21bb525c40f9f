#include "mfvit/dataset.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "mfvit/error.hpp"
#include "mfvit/image_io.hpp"

namespace mfvit::pipeline {

Features parse_features(const std::string& s) {
  if (s == "cxr") return Features::cxr;
  if (s == "enh") return Features::enh;
  throw ConfigError("unknown feature type '" + s + "' (expected cxr or enh)");
}

std::string features_name(Features f) { return f == Features::cxr ? "cxr" : "enh"; }

std::filesystem::path enhanced_path(const RunManifest& m, const ManifestRow& row, const std::string& kind) {
  return m.base_dir / "enh" / (std::filesystem::path(row.path).stem().string() + "_" + kind + ".img2");
}

SplitData load_split(const RunManifest& m, Split split, Features features) {
  SplitData out;
  for (const auto& row : m.rows) {
    if (row.split != split) continue;
    if (features == Features::cxr) {
      out.images.push_back(imgproc::load_image(m.resolve(row)));
    } else {
      const auto p = enhanced_path(m, row);
      if (!std::filesystem::exists(p)) {
        throw DependencyError("enhanced image " + p.string() + " missing; run the enhance stage first");
      }
      out.images.push_back(imgproc::load_img2(p));
    }
    out.labels.push_back(row.label);
  }
  return out;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads < 1 ? 1 : threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void write_features(const imgproc::EnhancedFeatures& f, const std::filesystem::path& dir, const std::string& stem,
                    bool png_previews) {
  const std::pair<const char*, const imgproc::Image2D*> items[] = {
      {"mf", &f.mf}, {"lwpa", &f.lwpa}, {"lpe", &f.lpe}, {"elea", &f.elea}};
  for (const auto& [kind, img] : items) {
    imgproc::save_img2(*img, dir / (stem + "_" + kind + ".img2"));
    if (png_previews) imgproc::save_png(*img, dir / (stem + "_" + kind + ".png"));
  }
}

}  // namespace

std::size_t enhance_manifest(const RunManifest& m, const imgproc::EnhanceConfig& cfg, int threads) {
  const imgproc::Enhancer enhancer(cfg);
  const auto dir = m.base_dir / "enh";
  std::filesystem::create_directories(dir);
  parallel_for(m.rows.size(), threads, [&](std::size_t i) {
    const auto& row = m.rows[i];
    const auto f = enhancer.run(imgproc::load_image(m.resolve(row)));
    write_features(f, dir, std::filesystem::path(row.path).stem().string(), false);
  });
  return m.rows.size() * 4;
}

std::size_t enhance_files(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir,
                          const imgproc::EnhanceConfig& cfg, int threads, bool png_previews) {
  const imgproc::Enhancer enhancer(cfg);
  std::filesystem::create_directories(out_dir);
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const auto f = enhancer.run(imgproc::load_image(inputs[i]));
    write_features(f, out_dir, inputs[i].stem().string(), png_previews);
  });
  return inputs.size() * (png_previews ? 8 : 4);
}

}  // namespace mfvit::pipeline
