#include "mfvit/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mfvit/error.hpp"
#include "mfvit/rng.hpp"

namespace mfvit::pipeline {

int parse_label(const std::string& s) {
  if (s == "normal" || s == "0") return 0;
  if (s == "pneumonia" || s == "1") return 1;
  if (s == "covid" || s == "2") return 2;
  throw ParseError("unknown label '" + s + "' (expected normal, pneumonia or covid)");
}

std::string label_name(int label) {
  switch (label) {
    case 0: return "normal";
    case 1: return "pneumonia";
    case 2: return "covid";
  }
  throw IndexError("label index " + std::to_string(label) + " out of range");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test1") return Split::test1;
  if (s == "test2") return Split::test2;
  throw ParseError("unknown split '" + s + "'");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test1: return "test1";
    case Split::test2: return "test2";
  }
  return "?";
}

std::vector<ManifestRow> RunManifest::rows_in(Split s) const {
  std::vector<ManifestRow> out;
  for (const auto& r : rows) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::array<std::size_t, 4> RunManifest::split_counts() const {
  std::array<std::size_t, 4> c{};
  for (const auto& r : rows) ++c[static_cast<int>(r.split)];
  return c;
}

void RunManifest::validate() const {
  std::set<std::string> paths;
  for (const auto& r : rows) {
    if (!paths.insert(r.path).second) throw ValidationError("duplicate manifest path '" + r.path + "'");
  }
  std::map<std::string, std::set<Split>> seen;
  for (const auto& r : rows) {
    if (r.split != Split::test2) seen[r.patient_id].insert(r.split);
  }
  std::vector<std::string> overlap;
  for (const auto& [id, splits] : seen) {
    if (splits.size() > 1) overlap.push_back(id);
  }
  if (!overlap.empty()) {
    std::string ids;
    for (const auto& id : overlap) ids += (ids.empty() ? "" : ", ") + id;
    throw ValidationError("patients appear in more than one of train/val/test1: " + ids);
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

RunManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  RunManifest m;
  m.base_dir = base_dir;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (!header) {
      if (cells != std::vector<std::string>{"path", "label", "patient_id", "split"}) {
        throw ParseError("manifest header must be 'path,label,patient_id,split', got '" + line + "'");
      }
      header = true;
      continue;
    }
    if (cells.size() != 4) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected 4 fields, got " +
                       std::to_string(cells.size()));
    }
    if (cells[0].empty() || cells[2].empty()) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": empty path or patient_id");
    }
    m.rows.push_back({cells[0], parse_label(cells[1]), cells[2], parse_split(cells[3])});
  }
  if (!header) throw ParseError("manifest is empty");
  m.validate();
  return m;
}

RunManifest load_manifest(const std::filesystem::path& csv) {
  std::ifstream is(csv, std::ios::binary);
  if (!is) throw DependencyError("cannot open manifest " + csv.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), csv.parent_path());
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& csv) {
  std::ofstream os(csv, std::ios::binary);
  if (!os) throw DependencyError("cannot write manifest " + csv.string());
  os << "path,label,patient_id,split\n";
  for (const auto& r : manifest.rows) {
    os << r.path << ',' << label_name(r.label) << ',' << r.patient_id << ',' << split_name(r.split) << '\n';
  }
}

std::vector<std::size_t> sample_label_fraction(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (fraction == 1.0) {
    if (n == 0) throw ConfigError("label fraction sample is empty");
    return idx;
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (k == 0) throw ConfigError("label fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                                " rows selects nothing");
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace mfvit::pipeline
