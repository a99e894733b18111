#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ambiseg {

/// Binary segmentation mask, row-major, one byte per pixel holding 0 or 1.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  std::size_t area() const {
    std::size_t n = 0;
    for (auto p : pixels) n += p != 0;
    return n;
  }
  bool empty() const { return area() == 0; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace ambiseg
