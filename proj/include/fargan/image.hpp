#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fargan/tensor.hpp"

namespace fargan {

/// 8-bit interleaved image (row-major, channels innermost).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Reads an 8-bit grayscale or RGB PNG (alpha dropped, 16-bit reduced, palette expanded).
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// [0, 255] -> [-1, 1], shape [1, C, H, W].
template <typename T>
Tensor<T> image_to_tensor(const Image8& image) {
  Tensor<T> out(Shape{1, image.channels, image.height, image.width});
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        out.at(0, c, y, x) = static_cast<T>(image.at(x, y, c)) / T(127.5) - T{1};
      }
    }
  }
  return out;
}

/// Sample `n` of an NCHW tensor in [-1, 1] -> 8-bit image (clamped, rounded).
template <typename T>
Image8 tensor_to_image(const Tensor<T>& t, Index n = 0) {
  Image8 out(static_cast<int>(t.dim(3)), static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)));
  for (int c = 0; c < out.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        const double v = std::round((static_cast<double>(t.at(n, c, y, x)) + 1.0) * 127.5);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace fargan
