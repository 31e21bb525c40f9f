#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfvit/tensor.hpp"

namespace mfvit::ad {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;
};

// Named-tensor table. Binary layout (little-endian):
//   "MFVC" | u32 version=1 | u32 count |
//   per tensor: u16 name_len | name bytes | u8 dtype | u8 ndim | ndim x u32 | data
// The JSON sidecar (<path>.json) carries `meta` (config, seeds, lineage).
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  // Stores the tensor values; dtype defaults to the active precision.
  void add(const std::string& name, const Tensor& t);
  void add(const std::string& name, const Tensor& t, DType dtype);
  void add_all(const std::vector<NamedTensor>& tensors);

  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const CheckpointEntry* find(const std::string& name) const;
  // Throws ConfigError naming the tensor when absent.
  const CheckpointEntry& get(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  // Copies stored values into live tensors matched by name; shapes must agree.
  void load_into(const std::vector<NamedTensor>& targets, const std::string& prefix = "") const;

  // FNV-1a over names, shapes and values of entries whose name starts with prefix.
  std::uint64_t fingerprint(const std::string& prefix = "") const;

  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

  void write_stream(std::ostream& os) const;
  static Checkpoint read_stream(std::istream& is);

  nlohmann::json meta = nlohmann::json::object();

 private:
  std::vector<CheckpointEntry> entries_;
};

std::filesystem::path sidecar_path(const std::filesystem::path& ckpt);
std::string fingerprint_hex(std::uint64_t fp);

}  // namespace mfvit::ad
