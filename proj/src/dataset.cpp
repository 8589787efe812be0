#include "fargan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fargan/errors.hpp"

namespace fargan {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Rgb random_color(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return {static_cast<std::uint8_t>(dist(rng)), static_cast<std::uint8_t>(dist(rng)),
          static_cast<std::uint8_t>(dist(rng))};
}

Rgb scale_color(Rgb c, double f) {
  auto s = [f](std::uint8_t v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * f), 0L, 255L)); };
  return {s(c.r), s(c.g), s(c.b)};
}

struct Canvas {
  Image8 image;
  int size;

  void set(int x, int y, Rgb c) {
    image.at(x, y, 0) = c.r;
    image.at(x, y, 1) = c.g;
    image.at(x, y, 2) = c.b;
  }

  template <typename Inside>
  void fill(Rgb color, Inside&& inside) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (inside((x + 0.5) / size, (y + 0.5) / size)) set(x, y, color);
      }
    }
  }

  void ellipse(double cx, double cy, double ax, double ay, Rgb color) {
    fill(color, [&](double x, double y) {
      const double dx = (x - cx) / ax, dy = (y - cy) / ay;
      return dx * dx + dy * dy <= 1.0;
    });
  }

  void polygon(const std::vector<Point2>& pts, Rgb color) {
    fill(color, [&](double x, double y) {
      bool inside = false;
      for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
        if ((pts[i].y > y) != (pts[j].y > y) &&
            x < (pts[j].x - pts[i].x) * (y - pts[i].y) / (pts[j].y - pts[i].y) + pts[i].x) {
          inside = !inside;
        }
      }
      return inside;
    });
  }

  /// Pixels whose centre lies within `width_px` of the polyline.
  void stroke(const std::vector<Point2>& pts, bool closed, double width_px, Rgb color) {
    const double r = width_px / size;
    fill(color, [&](double x, double y) {
      const std::size_t segments = closed ? pts.size() : pts.size() - 1;
      for (std::size_t i = 0; i < segments; ++i) {
        const Point2& a = pts[i];
        const Point2& b = pts[(i + 1) % pts.size()];
        const double vx = b.x - a.x, vy = b.y - a.y;
        const double len2 = vx * vx + vy * vy;
        double t = len2 > 0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dx = a.x + t * vx - x, dy = a.y + t * vy - y;
        if (dx * dx + dy * dy <= r * r) return true;
      }
      return false;
    });
  }
};

std::vector<Point2> slice(const LandmarkSet& lm, std::size_t first, std::size_t last) {
  return {lm.points.begin() + static_cast<std::ptrdiff_t>(first),
          lm.points.begin() + static_cast<std::ptrdiff_t>(last) + 1};
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

}  // namespace

IdentityParams IdentityParams::sample(std::uint64_t seed, int identity) {
  Rng rng = make_rng(seed, 0x1D000000ULL + static_cast<std::uint64_t>(identity));
  IdentityParams p;
  p.face_width = uniform(rng, 0.24, 0.31);
  p.face_height = uniform(rng, 0.32, 0.38);
  p.eye_spacing = uniform(rng, 0.085, 0.115);
  p.skin = random_color(rng, 120, 235);
  p.hair = random_color(rng, 10, 110);
  p.background = random_color(rng, 0, 255);
  return p;
}

void ExpressionParams::validate() const {
  if (mouth_open < 0 || mouth_open > 1 || eye_closure < 0 || eye_closure > 1 || brow_raise < -1 || brow_raise > 1 ||
      yaw < -1 || yaw > 1) {
    throw ContractError("expression parameter outside its declared range");
  }
}

ExpressionParams ExpressionParams::sample(std::uint64_t seed, int identity, int frame) {
  Rng rng = make_rng(seed, (static_cast<std::uint64_t>(identity) << 20) ^ static_cast<std::uint64_t>(frame) ^ 0xE0000000000ULL);
  ExpressionParams ex;
  ex.mouth_open = uniform(rng, 0.0, 1.0);
  ex.brow_raise = uniform(rng, -1.0, 1.0);
  ex.yaw = uniform(rng, -1.0, 1.0);
  ex.eye_closure = uniform(rng, 0.0, 1.0);
  return ex;
}

Rgb FeaturePalette::brow(const IdentityParams& id) { return scale_color(id.hair, 0.6); }
Rgb FeaturePalette::nose(const IdentityParams& id) { return scale_color(id.skin, 0.7); }

RenderedFace synth_render(const IdentityParams& id, const ExpressionParams& ex, int size) {
  if (size < 32) throw ContractError("synth_render: size must be >= 32");
  ex.validate();

  const double head_x = 0.5 + 0.03 * ex.yaw;
  const double head_y = 0.53;
  const double a = id.face_width, b = id.face_height;
  const double fx = 0.5 + 0.06 * ex.yaw;  // feature midline
  const double eye_y = head_y - 0.22 * b;
  const double tip_y = head_y + 0.2 * b;
  const double mouth_y = head_y + 0.55 * b;

  LandmarkSet lm;
  auto& p = lm.points;
  for (int i = 0; i <= 16; ++i) {
    const double phi = (kPi + 0.25) - i / 16.0 * (kPi + 0.5);
    p[i] = {head_x + a * std::cos(phi), head_y + b * std::sin(phi)};
  }
  // Eyebrows 17-21 (image-left) and 22-26, outer to inner / inner to outer.
  const double brow_y = eye_y - 0.075 - 0.025 * ex.brow_raise;
  for (int i = 0; i < 5; ++i) {
    const double t = i / 4.0;
    const double arch = 0.02 * std::sin(t * kPi);
    p[17 + i] = {fx - id.eye_spacing - 0.06 + 0.1 * t, brow_y - arch};
    p[22 + i] = {fx + id.eye_spacing - 0.04 + 0.1 * t, brow_y - arch};
  }
  for (int i = 0; i < 4; ++i) p[27 + i] = {fx, eye_y + (tip_y - eye_y) * i / 3.0};
  for (int i = 0; i < 5; ++i) {
    const double t = (i - 2) / 2.0;
    p[31 + i] = {fx + 0.04 * t, tip_y + 0.025 - 0.012 * t * t};
  }
  const double eye_half_w = 0.045;
  const double eye_half_h = 0.025 * (1.0 - ex.eye_closure);
  for (int side = 0; side < 2; ++side) {
    const double cx = side == 0 ? fx - id.eye_spacing : fx + id.eye_spacing;
    const std::size_t base = side == 0 ? 36 : 42;
    p[base + 0] = {cx - eye_half_w, eye_y};
    p[base + 1] = {cx - eye_half_w / 3, eye_y - eye_half_h};
    p[base + 2] = {cx + eye_half_w / 3, eye_y - eye_half_h};
    p[base + 3] = {cx + eye_half_w, eye_y};
    p[base + 4] = {cx + eye_half_w / 3, eye_y + eye_half_h};
    p[base + 5] = {cx - eye_half_w / 3, eye_y + eye_half_h};
  }
  const double outer_w = 0.085, outer_h = 0.02 + 0.045 * ex.mouth_open;
  for (int k = 0; k < 12; ++k) {
    const double theta = kPi + k * 2.0 * kPi / 12.0;
    p[48 + k] = {fx + outer_w * std::cos(theta), mouth_y + outer_h * std::sin(theta)};
  }
  const double inner_w = 0.055, inner_h = 0.004 + 0.036 * ex.mouth_open;
  for (int k = 0; k < 8; ++k) {
    const double theta = kPi + k * 2.0 * kPi / 8.0;
    p[60 + k] = {fx + inner_w * std::cos(theta), mouth_y + inner_h * std::sin(theta)};
  }
  for (auto& pt : p) pt = {std::clamp(pt.x, 0.0, 1.0), std::clamp(pt.y, 0.0, 1.0)};

  Canvas canvas{Image8(size, size, 3), size};
  canvas.fill(id.background, [](double, double) { return true; });
  canvas.ellipse(head_x, head_y - 0.12, a * 1.1, b * 0.85, id.hair);
  canvas.ellipse(head_x, head_y, a, b, id.skin);
  canvas.stroke(slice(lm, 27, 30), false, 0.8, FeaturePalette::nose(id));
  canvas.stroke(slice(lm, 31, 35), false, 0.8, FeaturePalette::nose(id));
  canvas.stroke(slice(lm, 17, 21), false, 1.2, FeaturePalette::brow(id));
  canvas.stroke(slice(lm, 22, 26), false, 1.2, FeaturePalette::brow(id));
  for (std::size_t base : {std::size_t{36}, std::size_t{42}}) {
    const auto eye = slice(lm, base, base + 5);
    canvas.polygon(eye, FeaturePalette::eye_white());
    canvas.stroke(eye, true, 0.6, FeaturePalette::eye_line());
  }
  canvas.polygon(slice(lm, 48, 59), FeaturePalette::lips());
  canvas.stroke(slice(lm, 48, 59), true, 0.6, FeaturePalette::lips());
  canvas.polygon(slice(lm, 60, 67), FeaturePalette::mouth_cavity());
  canvas.stroke(slice(lm, 60, 67), true, 0.5, FeaturePalette::mouth_cavity());
  return {std::move(canvas.image), lm};
}

std::vector<int> DatasetManifest::identities_in(Split split) const {
  std::vector<int> out;
  for (const auto& e : identities) {
    if (e.split == split) out.push_back(e.id);
  }
  return out;
}

std::size_t DatasetManifest::frame_count() const {
  std::size_t n = 0;
  for (const auto& e : identities) n += e.frames.size();
  return n;
}

void DatasetManifest::validate() const {
  std::map<int, Split> seen;
  for (const auto& e : identities) {
    if (!seen.emplace(e.id, e.split).second) throw ContractError("identity id " + std::to_string(e.id) + " repeated");
  }
}

std::string DatasetManifest::serialize() const {
  std::ostringstream os;
  for (const auto& e : identities) {
    for (const auto& f : e.frames) os << e.name << '/' << f << ' ' << e.id << ' ' << split_name(e.split) << '\n';
  }
  return os.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<int, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string path, split;
    int id = 0;
    if (!(fields >> path >> id >> split)) throw ParseError(line_no, "expected '<identity>/<frame> <id> <split>'");
    const auto slash = path.find('/');
    if (slash == std::string::npos) throw ParseError(line_no, "frame path lacks identity directory");
    if (split != "train" && split != "test") throw ParseError(line_no, "unknown split '" + split + "'");
    auto [it, inserted] = index.emplace(id, m.identities.size());
    if (inserted) {
      m.identities.push_back({id, path.substr(0, slash), {}, split == "train" ? Split::train : Split::test});
    }
    m.identities[it->second].frames.push_back(path.substr(slash + 1));
  }
  return m;
}

std::string identity_name(int id) {
  std::ostringstream os;
  os << "id" << std::setw(4) << std::setfill('0') << id;
  return os.str();
}

std::string frame_name(int index) {
  std::ostringstream os;
  os << 'f' << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

DatasetManifest split_identities(int n_identities, std::uint64_t seed) {
  if (n_identities < 1) throw ContractError("split_identities: need at least one identity");
  std::vector<int> order(static_cast<std::size_t>(n_identities));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x5B11);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = static_cast<int>(std::floor(0.8 * n_identities));
  DatasetManifest m;
  m.identities.resize(order.size());
  for (int i = 0; i < n_identities; ++i) m.identities[i] = {i, identity_name(i), {}, Split::test};
  for (int i = 0; i < n_train; ++i) m.identities[order[i]].split = Split::train;
  if (n_train == 0) m.warnings.push_back("split_identities: no training identities for n = " + std::to_string(n_identities));
  return m;
}

Dataset Dataset::synthetic(const SyntheticSpec& spec) {
  Dataset data;
  data.manifest = split_identities(spec.identities, spec.seed);
  for (auto& entry : data.manifest.identities) {
    const IdentityParams id = IdentityParams::sample(spec.seed, entry.id);
    std::vector<FrameData> frames;
    for (int f = 0; f < spec.frames; ++f) {
      entry.frames.push_back(frame_name(f));
      RenderedFace face = synth_render(id, ExpressionParams::sample(spec.seed, entry.id, f), spec.size);
      frames.push_back({std::move(face.image), face.landmarks});
    }
    data.frames.push_back(std::move(frames));
  }
  return data;
}

Dataset Dataset::load(const DatasetManifest& manifest, const std::filesystem::path& root) {
  Dataset data;
  data.manifest = manifest;
  for (const auto& entry : manifest.identities) {
    std::vector<FrameData> frames;
    for (const auto& f : entry.frames) {
      const auto stem = root / entry.name / f;
      frames.push_back({read_png(stem.string() + ".png"), read_landmarks(stem.string() + ".lms")});
    }
    data.frames.push_back(std::move(frames));
  }
  return data;
}

int Dataset::image_size() const {
  for (const auto& frames : this->frames) {
    if (!frames.empty()) return frames.front().image.width;
  }
  throw ContractError("dataset holds no frames");
}

void write_dataset(const Dataset& data, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  for (std::size_t i = 0; i < data.manifest.identities.size(); ++i) {
    const auto& entry = data.manifest.identities[i];
    const auto dir = root / entry.name;
    std::filesystem::create_directories(dir);
    for (std::size_t f = 0; f < entry.frames.size(); ++f) {
      write_png(dir / (entry.frames[f] + ".png"), data.frames[i][f].image);
      write_landmarks(dir / (entry.frames[f] + ".lms"), data.frames[i][f].landmarks);
    }
  }
  std::ofstream out(root / "manifest.txt", std::ios::binary);
  out << data.manifest.serialize();
}

DatasetManifest ingest_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());

  DatasetManifest m;
  for (const auto& dir : dirs) {
    std::vector<std::string> frames;
    std::vector<fs::path> pngs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") pngs.push_back(e.path());
    }
    std::sort(pngs.begin(), pngs.end());
    for (const auto& png : pngs) {
      fs::path lms = png;
      lms.replace_extension(".lms");
      if (!fs::exists(lms)) {
        m.warnings.push_back("skipping " + png.string() + ": missing landmark file");
        continue;
      }
      try {
        (void)read_landmarks(lms);
      } catch (const std::exception& err) {
        m.warnings.push_back("skipping " + png.string() + ": " + err.what());
        continue;
      }
      frames.push_back(png.stem().string());
    }
    if (frames.empty()) {
      m.warnings.push_back("skipping " + dir.string() + ": no usable frames");
      continue;
    }
    m.identities.push_back({static_cast<int>(m.identities.size()), dir.filename().string(), std::move(frames),
                            Split::train});
  }
  if (m.identities.empty()) throw std::runtime_error("dataset root " + root.string() + " holds no usable frames");

  const fs::path listing = root / "manifest.txt";
  if (fs::exists(listing)) {
    std::ifstream in(listing, std::ios::binary);
    std::stringstream text;
    text << in.rdbuf();
    const DatasetManifest declared = DatasetManifest::parse(text.str());
    std::map<std::string, const IdentityEntry*> by_name;
    for (const auto& e : declared.identities) by_name[e.name] = &e;
    for (auto& e : m.identities) {
      auto it = by_name.find(e.name);
      if (it == by_name.end()) {
        m.warnings.push_back("identity " + e.name + " absent from manifest.txt; assigned to test");
        e.split = Split::test;
      } else {
        e.id = it->second->id;
        e.split = it->second->split;
      }
    }
  } else {
    const DatasetManifest split = split_identities(static_cast<int>(m.identities.size()), 0);
    for (std::size_t i = 0; i < m.identities.size(); ++i) m.identities[i].split = split.identities[i].split;
    m.warnings.insert(m.warnings.end(), split.warnings.begin(), split.warnings.end());
  }
  m.validate();
  return m;
}

SamplePair sample_pair(const Dataset& data, Split split, Rng& rng, MaskMode mode) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.manifest.identities.size(); ++i) {
    if (data.manifest.identities[i].split == split && data.frames[i].size() >= 2) eligible.push_back(i);
  }
  if (eligible.empty()) throw std::runtime_error("sample_pair: no identity in split has two or more frames");
  const std::size_t pick = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
  const auto& frames = data.frames[pick];
  const int n = static_cast<int>(frames.size());
  const int t1 = std::uniform_int_distribution<int>(0, n - 1)(rng);
  int t2 = std::uniform_int_distribution<int>(0, n - 2)(rng);
  if (t2 >= t1) ++t2;
  SamplePair pair;
  pair.source = frames[t1].image;
  pair.target = frames[t2].image;
  pair.target_mask = rasterize(frames[t2].landmarks, frames[t2].image.width, mode);
  pair.identity = data.manifest.identities[pick].id;
  pair.source_frame = t1;
  pair.target_frame = t2;
  return pair;
}

}  // namespace fargan
