#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pathmamba/error.hpp"

namespace pathmamba {

/// H x W boolean raster, row-major; true marks road.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {
    if (h == 0 || w == 0) throw DimensionError("mask dimensions must be positive");
  }

  bool operator==(const BinaryMask&) const = default;

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits[r * width + c] = v ? 1 : 0; }

  /// Out-of-range coordinates read as background.
  bool get(long r, long c) const {
    if (r < 0 || c < 0 || r >= static_cast<long>(height) || c >= static_cast<long>(width)) return false;
    return bits[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)] != 0;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool empty() const { return count() == 0; }

  /// Every set pixel of *this is set in `other`.
  bool subset_of(const BinaryMask& other) const {
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i] && !other.bits[i]) return false;
    return true;
  }
};

}  // namespace pathmamba
