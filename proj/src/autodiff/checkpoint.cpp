#include "mfvit/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mfvit/binary_io.hpp"
#include "mfvit/error.hpp"

namespace mfvit::ad {

void Checkpoint::add(const std::string& name, const Tensor& t) {
  add(name, t, precision() == Precision::f32 ? DType::f32 : DType::f64);
}

void Checkpoint::add(const std::string& name, const Tensor& t, DType dtype) {
  if (name.empty() || name.size() > 0xFFFF) throw FormatError("checkpoint tensor name length out of range");
  if (t.rank() > 0xFF) throw FormatError("checkpoint tensor rank out of range");
  if (contains(name)) throw FormatError("duplicate checkpoint tensor '" + name + "'");
  entries_.push_back({name, dtype, t.shape(), t.values()});
}

void Checkpoint::add_all(const std::vector<NamedTensor>& tensors) {
  for (const auto& nt : tensors) add(nt.name, nt.tensor);
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
  const auto* e = find(name);
  if (!e) throw ConfigError("checkpoint is missing tensor '" + name + "'");
  return *e;
}

void Checkpoint::load_into(const std::vector<NamedTensor>& targets, const std::string& prefix) const {
  for (const auto& t : targets) {
    const auto& e = get(prefix + t.name);
    if (e.shape != t.tensor.shape()) {
      throw DimensionError("checkpoint tensor '" + e.name + "' has shape " + shape_str(e.shape) +
                           ", model expects " + shape_str(t.tensor.shape()));
    }
    Tensor dst = t.tensor;
    auto dv = dst.mutable_data();
    std::copy(e.values.begin(), e.values.end(), dv.begin());
  }
}

std::uint64_t Checkpoint::fingerprint(const std::string& prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    mix(e.name.data(), e.name.size());
    for (auto d : e.shape) {
      const auto d64 = static_cast<std::uint64_t>(d);
      mix(&d64, sizeof d64);
    }
    for (double v : e.values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      mix(&bits, sizeof bits);
    }
  }
  return h;
}

void Checkpoint::write_stream(std::ostream& os) const {
  os.write("MFVC", 4);
  binio::write_le<std::uint32_t>(os, kVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.dtype));
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    if (e.dtype == DType::f32) {
      for (double v : e.values) binio::write_f32(os, static_cast<float>(v));
    } else {
      for (double v : e.values) binio::write_f64(os, v);
    }
  }
  if (!os) throw FormatError("checkpoint write failed");
}

Checkpoint Checkpoint::read_stream(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "MFVC") throw FormatError("checkpoint: bad magic bytes");
  const auto version = binio::read_le<std::uint32_t>(is, "checkpoint version");
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = binio::read_le<std::uint32_t>(is, "checkpoint tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = binio::read_le<std::uint16_t>(is, "tensor name length");
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw FormatError("checkpoint: truncated tensor name");
    const auto dtype = binio::read_le<std::uint8_t>(is, "tensor dtype");
    if (dtype > 1) throw FormatError("checkpoint: unknown dtype " + std::to_string(dtype) + " for " + e.name);
    e.dtype = static_cast<DType>(dtype);
    const auto ndim = binio::read_le<std::uint8_t>(is, "tensor rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      e.shape.push_back(binio::read_le<std::uint32_t>(is, "tensor dim"));
      n *= e.shape.back();
    }
    if (n > (std::size_t{1} << 31)) throw FormatError("checkpoint: implausible tensor size for " + e.name);
    e.values.resize(n);
    for (double& v : e.values) {
      v = e.dtype == DType::f32 ? static_cast<double>(binio::read_f32(is, "tensor data"))
                                : binio::read_f64(is, "tensor data");
    }
    if (ck.contains(e.name)) throw FormatError("checkpoint: duplicate tensor " + e.name);
    ck.entries_.push_back(std::move(e));
  }
  return ck;
}

std::filesystem::path sidecar_path(const std::filesystem::path& ckpt) {
  auto p = ckpt;
  p += ".json";
  return p;
}

void Checkpoint::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write checkpoint " + path.string());
    write_stream(os);
  }
  std::ofstream js(sidecar_path(path));
  if (!js) throw FormatError("cannot write checkpoint sidecar for " + path.string());
  js << meta.dump(2) << '\n';
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DependencyError("checkpoint not found: " + path.string());
  Checkpoint ck = read_stream(is);
  std::ifstream js(sidecar_path(path));
  if (js) {
    try {
      ck.meta = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("checkpoint sidecar: " + std::string(e.what()));
    }
  }
  return ck;
}

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fp;
  return os.str();
}

}  // namespace mfvit::ad
