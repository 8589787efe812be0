#include "fargan/landmarks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fargan/errors.hpp"

namespace fargan {

namespace {

constexpr std::array<LandmarkStroke, 9> kStrokes{{
    {0, 16, false, LandmarkGroup::face_contour},
    {17, 21, false, LandmarkGroup::eyebrows},
    {22, 26, false, LandmarkGroup::eyebrows},
    {27, 30, false, LandmarkGroup::nose},
    {31, 35, false, LandmarkGroup::nose},
    {36, 41, true, LandmarkGroup::eyes},
    {42, 47, true, LandmarkGroup::eyes},
    {48, 59, true, LandmarkGroup::mouth_outer},
    {60, 67, true, LandmarkGroup::mouth_inner},
}};

double parse_double(std::string_view token, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw ParseError(line, "cannot parse number '" + std::string(token) + "'");
  }
  return value;
}

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

void LandmarkSet::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (double v : {points[i].x, points[i].y}) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw ContractError("landmark " + std::to_string(i) + " outside [0, 1]");
      }
    }
  }
}

std::span<const LandmarkStroke> landmark_strokes() { return kStrokes; }

Rgb ContourPalette::color(LandmarkGroup group) const {
  switch (group) {
    case LandmarkGroup::face_contour: return face_contour;
    case LandmarkGroup::eyebrows: return eyebrows;
    case LandmarkGroup::nose: return nose;
    case LandmarkGroup::eyes: return eyes;
    case LandmarkGroup::mouth_outer: return mouth_outer;
    case LandmarkGroup::mouth_inner: return mouth_inner;
  }
  return {};
}

void ContourPalette::validate() const {
  const std::array<Rgb, 6> colors{face_contour, eyebrows, nose, eyes, mouth_outer, mouth_inner};
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if (colors[i] == Rgb{}) throw ConfigError("palette colour equals the black background");
    for (std::size_t j = i + 1; j < colors.size(); ++j) {
      if (colors[i] == colors[j]) throw ConfigError("palette colours must be pairwise distinct");
    }
  }
}

LandmarkSet parse_landmarks(std::istream& in) {
  LandmarkSet lm;
  std::string line;
  std::size_t count = 0;
  std::size_t line_no = 0;
  std::size_t trailing_blank = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      ++trailing_blank;
      continue;
    }
    if (trailing_blank) throw ParseError(line_no, "blank line inside landmark list");
    if (count == kLandmarkCount) throw ParseError(line_no, "expected exactly 68 landmark lines");
    std::istringstream fields(line);
    std::string xs, ys, extra;
    if (!(fields >> xs >> ys) || (fields >> extra)) throw ParseError(line_no, "expected two numbers 'x y'");
    const double x = parse_double(xs, line_no);
    const double y = parse_double(ys, line_no);
    if (!std::isfinite(x) || !std::isfinite(y)) throw ParseError(line_no, "non-finite coordinate");
    if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) throw ParseError(line_no, "coordinate outside [0, 1]");
    lm.points[count++] = {x, y};
  }
  if (count != kLandmarkCount) {
    throw ParseError(line_no, "expected 68 landmark lines, found " + std::to_string(count));
  }
  return lm;
}

LandmarkSet read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_landmarks(in);
}

std::string format_landmarks(const LandmarkSet& lm) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (const auto& p : lm.points) os << p.x << ' ' << p.y << '\n';
  return os.str();
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create " + path.string());
  out << format_landmarks(lm);
}

int to_pixel(double v, int size) {
  return std::clamp(static_cast<int>(std::floor(v * size)), 0, size - 1);
}

MaskImage rasterize_contour(const LandmarkSet& lm, int size, const ContourPalette& palette) {
  if (size < 16) throw ContractError("rasterize_contour: size must be >= 16");
  lm.validate();
  palette.validate();
  MaskImage mask{MaskMode::contour, Image8(size, size, 3)};
  for (const auto& stroke : kStrokes) {
    const Rgb color = palette.color(stroke.group);
    auto plot = [&](int x, int y) {
      mask.pixels.at(x, y, 0) = color.r;
      mask.pixels.at(x, y, 1) = color.g;
      mask.pixels.at(x, y, 2) = color.b;
    };
    auto segment = [&](std::size_t a, std::size_t b) {
      draw_line(to_pixel(lm.points[a].x, size), to_pixel(lm.points[a].y, size), to_pixel(lm.points[b].x, size),
                to_pixel(lm.points[b].y, size), plot);
    };
    for (std::size_t i = stroke.first; i < stroke.last; ++i) segment(i, i + 1);
    if (stroke.closed) segment(stroke.last, stroke.first);
  }
  return mask;
}

std::vector<Point2> convex_hull(std::vector<Point2> points) {
  std::sort(points.begin(), points.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) return points;
  std::vector<Point2> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  return hull;
}

MaskImage rasterize_binary(const LandmarkSet& lm, int size) {
  if (size < 16) throw ContractError("rasterize_binary: size must be >= 16");
  lm.validate();
  MaskImage mask{MaskMode::binary, Image8(size, size, 1)};
  std::vector<Point2> scaled;
  for (const auto& p : lm.points) scaled.push_back({p.x * size, p.y * size});
  const std::vector<Point2> hull = convex_hull(scaled);

  if (hull.size() < 3) {
    // Collinear or coincident points: fill the segment between the extremes.
    const Point2 a = hull.front();
    const Point2 b = hull.back();
    draw_line(to_pixel(a.x / size, size), to_pixel(a.y / size, size), to_pixel(b.x / size, size),
              to_pixel(b.y / size, size), [&](int x, int y) { mask.pixels.at(x, y, 0) = 1; });
    return mask;
  }

  double min_y = hull[0].y, max_y = hull[0].y;
  for (const auto& p : hull) {
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(max_y)));
  constexpr double kTolerance = 1e-9;
  for (int y = y0; y <= y1; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point2 c{x + 0.5, y + 0.5};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        inside = cross(hull[i], hull[(i + 1) % hull.size()], c) >= -kTolerance;
      }
      if (inside) mask.pixels.at(x, y, 0) = 1;
    }
  }
  return mask;
}

MaskImage rasterize(const LandmarkSet& lm, int size, MaskMode mode) {
  return mode == MaskMode::contour ? rasterize_contour(lm, size) : rasterize_binary(lm, size);
}

Image8 mask_to_png_image(const MaskImage& mask) {
  if (mask.mode == MaskMode::contour) return mask.pixels;
  Image8 out = mask.pixels;
  for (auto& v : out.pixels) v = v ? 255 : 0;
  return out;
}

}  // namespace fargan
