#pragma once

// 68-point landmark sets and their two mask encodings: palette-coloured
// contour drawings and a filled convex-hull face region.

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>

#include "fargan/image.hpp"

namespace fargan {

inline constexpr std::size_t kLandmarkCount = 68;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// 68 ordered points in normalised [0, 1] image coordinates.
struct LandmarkSet {
  std::array<Point2, kLandmarkCount> points{};

  /// Throws ContractError if any coordinate is non-finite or outside [0, 1].
  void validate() const;
};

enum class LandmarkGroup { face_contour, eyebrows, nose, eyes, mouth_outer, mouth_inner };

/// One polyline of the standard 68-point scheme (indices inclusive).
struct LandmarkStroke {
  std::size_t first;
  std::size_t last;
  bool closed;
  LandmarkGroup group;
};

/// jaw 0-16, brows 17-21 / 22-26, nose bridge 27-30 and base 31-35,
/// eyes 36-41 / 42-47 (closed), mouth 48-59 / 60-67 (closed).
std::span<const LandmarkStroke> landmark_strokes();

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct ContourPalette {
  Rgb face_contour{255, 0, 0};
  Rgb eyebrows{0, 255, 0};
  Rgb nose{255, 255, 0};
  Rgb eyes{0, 0, 255};
  Rgb mouth_outer{255, 0, 255};
  Rgb mouth_inner{0, 255, 255};

  Rgb color(LandmarkGroup group) const;
  /// Pairwise distinct and never black.
  void validate() const;
};

enum class MaskMode { contour, binary };

/// Contour masks are RGB with palette colours on black; binary masks are
/// one channel holding 0 or 1.
struct MaskImage {
  MaskMode mode = MaskMode::contour;
  Image8 pixels;
};

/// Parses 68 lines of "x y". Blank trailing lines are ignored.
LandmarkSet parse_landmarks(std::istream& in);
LandmarkSet read_landmarks(const std::filesystem::path& path);
std::string format_landmarks(const LandmarkSet& lm);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm);

/// Normalised coordinate -> pixel index: clamp(floor(v * size), 0, size - 1).
int to_pixel(double v, int size);

/// Integer Bresenham line including both endpoints.
template <typename Plot>
void draw_line(int x0, int y0, int x1, int y1, Plot&& plot) {
  const int dx = x1 > x0 ? x1 - x0 : x0 - x1;
  const int dy = -(y1 > y0 ? y1 - y0 : y0 - y1);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    plot(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

MaskImage rasterize_contour(const LandmarkSet& lm, int size, const ContourPalette& palette = {});
MaskImage rasterize_binary(const LandmarkSet& lm, int size);
MaskImage rasterize(const LandmarkSet& lm, int size, MaskMode mode);

/// Convex hull (counter-clockwise in y-down pixel space, no collinear points).
std::vector<Point2> convex_hull(std::vector<Point2> points);

/// On-disk form: RGB for contour, grayscale 0/255 for binary.
Image8 mask_to_png_image(const MaskImage& mask);

/// Mask as [1, C, H, W] in [-1, 1] (binary 0 -> -1, 1 -> +1).
template <typename T>
Tensor<T> mask_to_tensor(const MaskImage& mask) {
  if (mask.mode == MaskMode::contour) return image_to_tensor<T>(mask.pixels);
  const Image8& img = mask.pixels;
  Tensor<T> out(Shape{1, 1, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(0, 0, y, x) = img.at(x, y, 0) ? T{1} : T{-1};
  }
  return out;
}

}  // namespace fargan
