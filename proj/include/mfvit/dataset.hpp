#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mfvit/enhance.hpp"
#include "mfvit/image.hpp"
#include "mfvit/manifest.hpp"

namespace mfvit::pipeline {

enum class Features { cxr, enh };

Features parse_features(const std::string& s);
std::string features_name(Features f);

// <dataset>/enh/<stem>_<kind>.img2 with kind in {mf, lwpa, lpe, elea}.
std::filesystem::path enhanced_path(const RunManifest& m, const ManifestRow& row, const std::string& kind = "mf");

struct SplitData {
  std::vector<imgproc::Image2D> images;
  std::vector<int> labels;
};

// Loads raw (cxr) or enhanced MF (enh) images of one split in manifest
// order. Missing enhanced files -> DependencyError naming the enhance stage.
SplitData load_split(const RunManifest& m, Split split, Features features);

// Writes MF plus the three intermediate features for every manifest row;
// returns the number of files written. Work is spread over `threads`
// workers; output does not depend on the thread count.
std::size_t enhance_manifest(const RunManifest& m, const imgproc::EnhanceConfig& cfg, int threads);

// Enhances standalone files into out_dir using the same naming.
std::size_t enhance_files(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out_dir,
                          const imgproc::EnhanceConfig& cfg, int threads, bool png_previews);

}  // namespace mfvit::pipeline
