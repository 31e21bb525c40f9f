#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mfvit::pipeline {

inline constexpr int kNumClasses = 3;

// Class indices: 0 normal, 1 pneumonia, 2 covid.
int parse_label(const std::string& s);
std::string label_name(int label);

enum class Split { train, val, test1, test2 };

Split parse_split(const std::string& s);
std::string split_name(Split s);

struct ManifestRow {
  std::string path;  // as written in the CSV (relative to the manifest directory)
  int label = 0;
  std::string patient_id;
  Split split = Split::train;
};

struct RunManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::vector<ManifestRow> rows_in(Split s) const;
  std::array<std::size_t, 4> split_counts() const;
  std::filesystem::path resolve(const ManifestRow& row) const { return base_dir / row.path; }
  // Duplicate paths -> ValidationError; patients shared between any two of
  // train/val/test1 -> ValidationError listing the ids.
  void validate() const;
};

// CSV with header `path,label,patient_id,split`. Validated on load.
RunManifest load_manifest(const std::filesystem::path& csv);
RunManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& csv);

// floor(fraction * n) indices drawn without replacement, returned in
// ascending order; fraction 1 returns 0..n-1.
std::vector<std::size_t> sample_label_fraction(std::size_t n, double fraction, std::uint64_t seed);

}  // namespace mfvit::pipeline
