#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/tensor.hpp"

// Flat binary checkpoint:
//   "PMCK" | version u32 | count u32
//   per entry: name_len u32 | name bytes (UTF-8) | rank u32 | dims u64[rank]
//              | width u8 | raw element bytes
// All integers and elements little-endian. Width is 4 (f32), 8 (f64) or
// 1 (opaque bytes, used for embedded metadata such as the run config).

namespace pathmamba {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'P', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint8_t width = 4;
  std::vector<std::uint8_t> bytes;

  template <class T>
  static CheckpointEntry from_tensor(std::string name, const Tensor<T>& t) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.shape = t.shape();
    e.width = sizeof(T);
    e.bytes.resize(t.numel() * sizeof(T));
    std::memcpy(e.bytes.data(), t.ptr(), e.bytes.size());
    return e;
  }

  static CheckpointEntry from_bytes(std::string name, const std::string& blob) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.shape = {blob.size()};
    e.width = 1;
    e.bytes.assign(blob.begin(), blob.end());
    return e;
  }

  template <class T>
  Tensor<T> to_tensor() const {
    if (width != sizeof(T))
      throw DimensionError("checkpoint entry '" + name + "' has element width " +
                           std::to_string(width));
    std::vector<T> v(shape_numel(shape));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return Tensor<T>(shape, std::move(v));
  }

  std::string to_string() const { return std::string(bytes.begin(), bytes.end()); }
};

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.width != 1 && e.width != 4 && e.width != 8)
      throw DimensionError("unsupported element width for '" + e.name + "'");
    if (e.bytes.size() != shape_numel(e.shape) * e.width)
      throw DimensionError("byte count mismatch for '" + e.name + "'");
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put<std::uint64_t>(os, d);
    detail::put<std::uint8_t>(os, e.width);
    os.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(is);
  std::vector<CheckpointEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(detail::get<std::uint32_t>(is));
    if (!is.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) throw IoError("checkpoint truncated");
    const auto rank = detail::get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(detail::get<std::uint64_t>(is));
    e.width = detail::get<std::uint8_t>(is);
    if (e.width != 1 && e.width != 4 && e.width != 8) throw IoError("bad element width in '" + e.name + "'");
    e.bytes.resize(shape_numel(e.shape) * e.width);
    if (!is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size())))
      throw IoError("checkpoint truncated");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace pathmamba
