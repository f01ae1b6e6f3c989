#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ddm/core/rng.hpp"
#include "ddm/geo/geodata.hpp"

namespace ddm {

// Procedural benchmark data: straight road bands rendered into the label,
// an image that shows the roads as dark strokes on a textured background,
// and GPS points sampled along the road centerlines with cross-track noise.
struct SynthSpec {
  int n_roads = 4;
  int road_width_px = 10;
  double points_per_road_px = 3.0;  // samples per pixel of centerline length
  double traj_noise_px = 2.0;
  double image_noise = 0.04;
  int traj_cap = 64;
};

struct SynthRegion {
  GeoRegion region;
  RegionRasters rasters;
  std::vector<TrajectoryPoint> points;
  std::vector<RoadPolyline> roads;
};

namespace detail {

// A random chord of the region: a line through an interior point at a random
// angle, clipped to the bounding box.
inline void random_chord(Rng& rng, int height, int width, double& r0, double& c0, double& r1,
                         double& c1) {
  const double cr = (0.15 + 0.7 * rng.uniform()) * height;
  const double cc = (0.15 + 0.7 * rng.uniform()) * width;
  const double theta = rng.uniform() * M_PI;
  const double dr = std::sin(theta), dc = std::cos(theta);
  const double diag = std::hypot(height, width);
  r0 = cr - dr * diag;
  c0 = cc - dc * diag;
  r1 = cr + dr * diag;
  c1 = cc + dc * diag;
  // Liang-Barsky clip to [1, h-1] x [1, w-1].
  double t0 = 0.0, t1 = 1.0;
  const double dx = c1 - c0, dy = r1 - r0;
  auto clip = [&](double p, double q) {
    if (p == 0) return q >= 0;
    const double t = q / p;
    if (p < 0) {
      if (t > t1) return false;
      t0 = std::max(t0, t);
    } else {
      if (t < t0) return false;
      t1 = std::min(t1, t);
    }
    return true;
  };
  const bool ok = clip(-dx, c0 - 1) && clip(dx, width - 1 - c0) && clip(-dy, r0 - 1) &&
                  clip(dy, height - 1 - r0);
  if (!ok) {  // degenerate; fall back to the horizontal midline
    r0 = r1 = cr;
    c0 = 1;
    c1 = width - 1;
    return;
  }
  const double nr0 = r0 + t0 * dy, nc0 = c0 + t0 * dx;
  const double nr1 = r0 + t1 * dy, nc1 = c0 + t1 * dx;
  r0 = nr0;
  c0 = nc0;
  r1 = nr1;
  c1 = nc1;
}

}  // namespace detail

inline SynthRegion make_synth_region(int height, int width, const SynthSpec& spec,
                                     std::uint64_t seed) {
  SynthRegion out;
  out.region = GeoRegion{0.0, 0.0, width, height, 1.0};
  Rng rng(seed);

  for (int i = 0; i < spec.n_roads; ++i) {
    double r0, c0, r1, c1;
    detail::random_chord(rng, height, width, r0, c0, r1, c1);
    if (std::hypot(r1 - r0, c1 - c0) < 4.0) {
      --i;
      continue;
    }
    RoadPolyline road;
    road.road_id = "synth-" + std::to_string(i);
    road.vertices = {unproject(r0, c0, out.region), unproject(r1, c1, out.region)};
    out.roads.push_back(std::move(road));
  }
  out.rasters.label = render_ground_truth(out.roads, out.region, spec.road_width_px);

  // Aerial-style image: light textured background with dark road strokes.
  const float base[3] = {0.72f, 0.75f, 0.70f};
  for (int ch = 0; ch < 3; ++ch) {
    out.rasters.image[ch] = RasterGrid(height, width, RasterKind::image_channel);
    for (std::size_t i = 0; i < out.rasters.image[ch].v.size(); ++i) {
      const float road = out.rasters.label.v[i];
      const float noisy = base[ch] - 0.45f * road +
                          static_cast<float>(rng.normal(0.0, spec.image_noise));
      out.rasters.image[ch].v[i] = std::clamp(noisy, 0.f, 1.f);
    }
  }

  // GPS points along the centerlines with perpendicular jitter.
  std::uint64_t stamp = 0;
  for (const auto& road : out.roads) {
    const auto a = project(road.vertices[0].first, road.vertices[0].second, out.region);
    const auto b = project(road.vertices[1].first, road.vertices[1].second, out.region);
    const double len = std::hypot(b.row - a.row, b.col - a.col);
    const double nr = (b.col - a.col) / len, nc = -(b.row - a.row) / len;  // unit normal
    const int n_pts = std::max(2, static_cast<int>(len * spec.points_per_road_px));
    for (int k = 0; k < n_pts; ++k) {
      const double t = rng.uniform();
      const double off = rng.normal(0.0, spec.traj_noise_px);
      const double row = a.row + t * (b.row - a.row) + off * nr;
      const double col = a.col + t * (b.col - a.col) + off * nc;
      const auto [lat, lon] = unproject(row, col, out.region);
      out.points.push_back(TrajectoryPoint{road.road_id, static_cast<double>(stamp++), lat, lon});
    }
  }
  out.rasters.traj = scale_traj(rasterize_trajectories(out.points, out.region), spec.traj_cap);
  return out;
}

// Independent fixed-size tiles, each from its own synthetic region.
inline std::vector<TileSample> make_synth_tiles(int count, int size, const SynthSpec& spec,
                                                std::uint64_t seed) {
  std::vector<TileSample> tiles;
  tiles.reserve(count);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const SynthRegion r = make_synth_region(size, size, spec, rng.next_u64());
    tiles.push_back(crop_tile(r.rasters, 0, 0, size));
  }
  return tiles;
}

// Benchmark variant probing complementary gating: the image is blanked on
// one half of the tile and the trajectory raster on the other half, so each
// half is only solvable from the surviving modality.
inline TileSample blank_halves(const TileSample& tile, bool image_blank_left = true) {
  TileSample out = tile;
  const int half = tile.width() / 2;
  const Rect left{0, 0, half, tile.height()};
  const Rect right{half, 0, tile.width() - half, tile.height()};
  for (auto& ch : out.image) detail::zero_rect(ch, image_blank_left ? left : right);
  detail::zero_rect(out.traj, image_blank_left ? right : left);
  return out;
}

}  // namespace ddm
