#pragma once

// 8-bit RGB images and single-channel masks with PNG persistence.
// Images hold raw bytes so disk round-trips are bit-exact; the model layer
// converts to [0,1] doubles at its input boundary. Canonical masks hold
// {0,1}, stored on disk as 8-bit grayscale with foreground = 255; loading
// preserves any other gray level verbatim so validation can reject it.

#include <cstdint>
#include <string>
#include <vector>

namespace langseg {

struct Image {
  int h = 0, w = 0;
  std::vector<std::uint8_t> px;  // h*w*3, row-major RGB

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_ * 3, 0) {}

  std::uint8_t& at(int r, int c, int ch) {
    return px[(static_cast<std::size_t>(r) * w + c) * 3 + ch];
  }
  std::uint8_t at(int r, int c, int ch) const {
    return px[(static_cast<std::size_t>(r) * w + c) * 3 + ch];
  }
  bool operator==(const Image& o) const = default;
};

struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;  // h*w; canonical values are 0 and 1

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

  std::uint8_t& at(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
  std::uint8_t at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
  bool operator==(const Mask& o) const = default;

  bool binary() const {
    for (auto x : v)
      if (x > 1) return false;
    return true;
  }
  std::int64_t area() const {
    std::int64_t n = 0;
    for (auto x : v) n += (x == 1);
    return n;
  }
};

// PNG I/O. Throws std::runtime_error on I/O or format failure.
void write_png_rgb(const std::string& path, const Image& img);
Image read_png_rgb(const std::string& path);  // grayscale inputs are expanded

// Masks: written as 8-bit gray with {0 -> 0, 1 -> 255}; on read, 255 maps to
// 1 and 0 to 0, while any other level is kept verbatim (flagged downstream).
void write_png_mask(const std::string& path, const Mask& mask);
Mask read_png_mask(const std::string& path);

}  // namespace langseg
