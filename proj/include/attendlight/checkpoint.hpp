#pragma once

// Versioned binary checkpoints: a small header (magic, version, model size,
// variant flags) followed by named tensors as little-endian 32-bit floats.
// Round-trips are bit-exact.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attendlight/tensor.hpp"

namespace attendlight {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  static constexpr std::uint32_t kMagic = 0x544c5441u;  // "ATLT"
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::uint32_t kFlagMeanState = 1u << 0;
  static constexpr std::uint32_t kFlagTopologyAgnostic = 1u << 1;

  std::uint32_t d = 0;
  std::uint32_t flags = kFlagTopologyAgnostic;
  std::map<std::string, Tensor<float>> tensors;

  bool mean_state_variant() const { return (flags & kFlagMeanState) != 0; }
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  detail::write_u32(out, Checkpoint::kMagic);
  detail::write_u32(out, Checkpoint::kVersion);
  detail::write_u32(out, ckpt.d);
  detail::write_u32(out, ckpt.flags);
  detail::write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (int d : tensor.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.values) detail::write_f32(out, v);
  }
}

inline Checkpoint load_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  if (detail::read_u32(in) != Checkpoint::kMagic)
    throw CheckpointError("not a checkpoint file (bad magic)");
  std::uint32_t version = detail::read_u32(in);
  if (version != Checkpoint::kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  ckpt.d = detail::read_u32(in);
  ckpt.flags = detail::read_u32(in);
  std::uint32_t count = detail::read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("truncated checkpoint");
    std::uint32_t ndim = detail::read_u32(in);
    std::vector<int> shape;
    for (std::uint32_t k = 0; k < ndim; ++k)
      shape.push_back(static_cast<int>(detail::read_u32(in)));
    Tensor<float> tensor(shape);
    for (auto& v : tensor.values) v = detail::read_f32(in);
    ckpt.tensors.emplace(std::move(name), std::move(tensor));
  }
  return ckpt;
}

inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

// Short content digest used as the checkpoint id in reports and manifests.
inline std::string checkpoint_digest(const Checkpoint& ckpt) {
  std::ostringstream buf(std::ios::binary);
  save_checkpoint(buf, ckpt);
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(buf.str())));
  return hex;
}

inline void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(out, ckpt);
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace attendlight
