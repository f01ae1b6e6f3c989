#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace ddm {

// Mean-earth meters per degree of latitude (spherical model).
inline constexpr double kMetersPerDegree = 111194.92664455873;

// Pixel grid anchored at a geographic origin; row 0 / col 0 is the origin,
// rows grow southward, columns grow eastward.
struct GeoRegion {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  int width_px = 0;
  int height_px = 0;
  double resolution = 1.0;  // meters per pixel

  void validate() const {
    if (width_px <= 0 || height_px <= 0)
      throw std::invalid_argument("region: non-positive dimensions");
    if (resolution <= 0) throw std::invalid_argument("region: non-positive resolution");
    if (origin_lat < -90 || origin_lat > 90 || origin_lon < -180 || origin_lon > 180)
      throw std::invalid_argument("region: origin out of range");
  }
};

struct TrajectoryPoint {
  std::string traj_id;
  double timestamp = 0.0;
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const { return lat >= -90 && lat <= 90 && lon >= -180 && lon <= 180; }
};

struct RoadPolyline {
  std::string road_id;
  std::vector<std::pair<double, double>> vertices;  // (lat, lon)

  void validate() const {
    if (vertices.size() < 2) throw std::invalid_argument("road: needs at least 2 vertices");
    for (std::size_t i = 1; i < vertices.size(); ++i)
      if (vertices[i] == vertices[i - 1])
        throw std::invalid_argument("road: consecutive duplicate vertices");
  }
};

enum class RasterKind { traj_count, traj_scaled, image_channel, label };

inline const char* raster_kind_name(RasterKind k) {
  switch (k) {
    case RasterKind::traj_count: return "traj_count";
    case RasterKind::traj_scaled: return "traj_scaled";
    case RasterKind::image_channel: return "image_channel";
    case RasterKind::label: return "label";
  }
  throw std::logic_error("raster kind");
}

inline RasterKind raster_kind_from_name(const std::string& s) {
  if (s == "traj_count") return RasterKind::traj_count;
  if (s == "traj_scaled") return RasterKind::traj_scaled;
  if (s == "image_channel") return RasterKind::image_channel;
  if (s == "label") return RasterKind::label;
  throw std::invalid_argument("unknown raster kind: " + s);
}

struct RasterGrid {
  int height = 0;
  int width = 0;
  RasterKind kind = RasterKind::traj_count;
  std::vector<float> v;

  RasterGrid() = default;
  RasterGrid(int h, int w, RasterKind k)
      : height(h), width(w), kind(k), v(static_cast<std::size_t>(h) * w, 0.f) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("raster: non-positive dimensions");
  }

  float& at(int r, int c) { return v[static_cast<std::size_t>(r) * width + c]; }
  const float& at(int r, int c) const { return v[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return v.size(); }

  double sum() const {
    double s = 0;
    for (float e : v) s += e;
    return s;
  }
};

// One training/eval unit: RGB image channels, scaled trajectory raster and a
// binary label, all of identical size.
struct TileSample {
  std::array<RasterGrid, 3> image;
  RasterGrid traj;
  RasterGrid label;
  int origin_row = 0;
  int origin_col = 0;

  int height() const { return traj.height; }
  int width() const { return traj.width; }

  void validate() const {
    for (const auto& ch : image) {
      if (ch.height != traj.height || ch.width != traj.width)
        throw std::invalid_argument("tile: image/traj size mismatch");
      if (ch.kind != RasterKind::image_channel) throw std::invalid_argument("tile: bad image kind");
    }
    if (label.height != traj.height || label.width != traj.width)
      throw std::invalid_argument("tile: label size mismatch");
    if (traj.kind != RasterKind::traj_scaled) throw std::invalid_argument("tile: bad traj kind");
    if (label.kind != RasterKind::label) throw std::invalid_argument("tile: bad label kind");
  }
};

// Axis-aligned rectangle in region pixel coordinates; x is the column axis.
struct Rect {
  int x0 = 0, y0 = 0, w = 0, h = 0;

  int x1() const { return x0 + w; }
  int y1() const { return y0 + h; }
  long long area() const { return static_cast<long long>(w) * h; }
  bool empty() const { return w <= 0 || h <= 0; }

  bool intersects(const Rect& o) const {
    return x0 < o.x1() && o.x0 < x1() && y0 < o.y1() && o.y0 < y1();
  }
  Rect clipped(int width, int height) const {
    const int nx0 = std::max(0, x0), ny0 = std::max(0, y0);
    const int nx1 = std::min(width, x1()), ny1 = std::min(height, y1());
    return Rect{nx0, ny0, std::max(0, nx1 - nx0), std::max(0, ny1 - ny0)};
  }
};

inline void to_json(nlohmann::json& j, const Rect& r) {
  j = {{"x0", r.x0}, {"y0", r.y0}, {"w", r.w}, {"h", r.h}};
}
inline void from_json(const nlohmann::json& j, Rect& r) {
  r.x0 = j.at("x0").get<int>();
  r.y0 = j.at("y0").get<int>();
  r.w = j.at("w").get<int>();
  r.h = j.at("h").get<int>();
}

// Validation/testing rectangles carved out of the region; training crops are
// drawn from the remainder (optionally restricted to an explicit train rect).
struct SplitLayout {
  std::vector<Rect> val;
  std::vector<Rect> test;
  std::vector<Rect> train;  // empty: the whole region

  void validate(const GeoRegion& region) const {
    auto check_rect = [&](const Rect& r, const char* what) {
      if (r.empty()) throw std::invalid_argument(std::string("split: empty ") + what);
      if (r.x0 < 0 || r.y0 < 0 || r.x1() > region.width_px || r.y1() > region.height_px)
        throw std::invalid_argument(std::string("split: ") + what + " outside region");
    };
    for (const auto& r : val) check_rect(r, "val rect");
    for (const auto& r : test) check_rect(r, "test rect");
    for (const auto& r : train) check_rect(r, "train rect");
    for (const auto& a : val)
      for (const auto& b : test)
        if (a.intersects(b)) throw std::invalid_argument("split: val and test overlap");
  }

  std::vector<Rect> excluded() const {
    std::vector<Rect> out = val;
    out.insert(out.end(), test.begin(), test.end());
    return out;
  }
};

inline void to_json(nlohmann::json& j, const SplitLayout& s) {
  j = {{"val", s.val}, {"test", s.test}};
  if (!s.train.empty()) j["train"] = s.train;
}
inline void from_json(const nlohmann::json& j, SplitLayout& s) {
  auto rects = [](const nlohmann::json& node) {
    std::vector<Rect> out;
    if (node.is_array())
      out = node.get<std::vector<Rect>>();
    else
      out.push_back(node.get<Rect>());
    return out;
  };
  s = SplitLayout{};
  if (j.contains("val")) s.val = rects(j.at("val"));
  if (j.contains("test")) s.test = rects(j.at("test"));
  if (j.contains("train")) s.train = rects(j.at("train"));
}

// Which quadrant of each modality to blank at evaluation time. Quadrants use
// the mathematical convention: 1 top-right, 2 top-left, 3 bottom-left,
// 4 bottom-right.
struct AttackSpec {
  int image_quadrant = 3;
  int traj_quadrant = 1;

  void validate() const {
    if (image_quadrant < 1 || image_quadrant > 4 || traj_quadrant < 1 || traj_quadrant > 4)
      throw std::invalid_argument("attack: quadrant must be 1..4");
    if (image_quadrant == traj_quadrant)
      throw std::invalid_argument("attack: quadrants must differ");
  }
};

}  // namespace ddm
