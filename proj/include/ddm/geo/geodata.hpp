#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ddm/core/rng.hpp"
#include "ddm/geo/types.hpp"

namespace ddm {

struct PixelPos {
  double row = 0.0;
  double col = 0.0;
};

// Local equirectangular projection: metric offsets from the region origin,
// with the east-west scale fixed at the origin latitude. Points may project
// outside the grid; callers filter.
inline PixelPos project(double lat, double lon, const GeoRegion& region) {
  const double row = (region.origin_lat - lat) * kMetersPerDegree / region.resolution;
  const double col = (lon - region.origin_lon) * kMetersPerDegree *
                     std::cos(region.origin_lat * M_PI / 180.0) / region.resolution;
  return {row, col};
}

inline PixelPos project(const TrajectoryPoint& p, const GeoRegion& region) {
  return project(p.lat, p.lon, region);
}

// Inverse of project(); used to synthesize data in pixel space.
inline std::pair<double, double> unproject(double row, double col, const GeoRegion& region) {
  const double lat = region.origin_lat - row * region.resolution / kMetersPerDegree;
  const double lon = region.origin_lon + col * region.resolution /
                                             (kMetersPerDegree *
                                              std::cos(region.origin_lat * M_PI / 180.0));
  return {lat, lon};
}

// Half-open cell assignment [r, r+1) x [c, c+1): a coordinate exactly on a
// boundary belongs to the higher-index cell.
inline std::pair<long long, long long> cell_of(const PixelPos& p) {
  return {static_cast<long long>(std::floor(p.row)),
          static_cast<long long>(std::floor(p.col))};
}

// Counts points per cell; out-of-region points are ignored.
inline RasterGrid rasterize_trajectories(std::span<const TrajectoryPoint> points,
                                         const GeoRegion& region) {
  region.validate();
  RasterGrid grid(region.height_px, region.width_px, RasterKind::traj_count);
  for (const auto& p : points) {
    const auto [r, c] = cell_of(project(p, region));
    if (r < 0 || r >= region.height_px || c < 0 || c >= region.width_px) continue;
    grid.at(static_cast<int>(r), static_cast<int>(c)) += 1.f;
  }
  return grid;
}

// Same, with isotropic Gaussian position noise of `sigma_m` meters applied to
// each point before binning.
inline RasterGrid rasterize_trajectories_noisy(std::span<const TrajectoryPoint> points,
                                               const GeoRegion& region, double sigma_m,
                                               Rng& rng) {
  region.validate();
  if (sigma_m < 0) throw std::invalid_argument("rasterize: negative noise sigma");
  const double sigma_px = sigma_m / region.resolution;
  RasterGrid grid(region.height_px, region.width_px, RasterKind::traj_count);
  for (const auto& p : points) {
    PixelPos pos = project(p, region);
    pos.row += sigma_px * rng.normal();
    pos.col += sigma_px * rng.normal();
    const auto [r, c] = cell_of(pos);
    if (r < 0 || r >= region.height_px || c < 0 || c >= region.width_px) continue;
    grid.at(static_cast<int>(r), static_cast<int>(c)) += 1.f;
  }
  return grid;
}

// Log-compressed count scaling into [0,1]: min(log1p(count), log1p(cap)) /
// log1p(cap). Raw taxi densities are heavy-tailed, so a saturating log keeps
// busy intersections from washing out everything else.
inline RasterGrid scale_traj(const RasterGrid& counts, int cap = 256) {
  if (counts.kind != RasterKind::traj_count)
    throw std::invalid_argument("scale_traj: input must be a count raster");
  if (cap < 1) throw std::invalid_argument("scale_traj: cap must be >= 1");
  RasterGrid out(counts.height, counts.width, RasterKind::traj_scaled);
  const double denom = std::log1p(static_cast<double>(cap));
  for (std::size_t i = 0; i < counts.v.size(); ++i) {
    const double num = std::min(std::log1p(static_cast<double>(counts.v[i])), denom);
    out.v[i] = static_cast<float>(num / denom);
  }
  return out;
}

namespace detail {

inline double dist_sq_to_segment(double pr, double pc, double ar, double ac, double br,
                                 double bc) {
  const double dr = br - ar, dc = bc - ac;
  const double len_sq = dr * dr + dc * dc;
  double t = len_sq > 0 ? ((pr - ar) * dr + (pc - ac) * dc) / len_sq : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qr = ar + t * dr, qc = ac + t * dc;
  return (pr - qr) * (pr - qr) + (pc - qc) * (pc - qc);
}

}  // namespace detail

// Rasterizes road polylines as bands: a pixel is road iff its center lies
// within width_px/2 of any segment (round caps and joins). Zero-length
// segments are skipped.
inline RasterGrid render_ground_truth(const std::vector<RoadPolyline>& roads,
                                      const GeoRegion& region, int width_px = 10) {
  region.validate();
  if (width_px < 1) throw std::invalid_argument("render: width must be >= 1");
  RasterGrid grid(region.height_px, region.width_px, RasterKind::label);
  const double rad = width_px / 2.0;
  const double rad_sq = rad * rad;
  for (const auto& road : roads) {
    std::vector<PixelPos> px;
    px.reserve(road.vertices.size());
    for (const auto& [lat, lon] : road.vertices) px.push_back(project(lat, lon, region));
    for (std::size_t i = 1; i < px.size(); ++i) {
      const auto& a = px[i - 1];
      const auto& b = px[i];
      if (a.row == b.row && a.col == b.col) continue;
      // Pixel centers sit at half-integer coordinates.
      const int r0 = std::max(0, static_cast<int>(std::floor(std::min(a.row, b.row) - rad - 0.5)));
      const int r1 = std::min(region.height_px - 1,
                              static_cast<int>(std::ceil(std::max(a.row, b.row) + rad)));
      const int c0 = std::max(0, static_cast<int>(std::floor(std::min(a.col, b.col) - rad - 0.5)));
      const int c1 = std::min(region.width_px - 1,
                              static_cast<int>(std::ceil(std::max(a.col, b.col) + rad)));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
          if (detail::dist_sq_to_segment(r + 0.5, c + 0.5, a.row, a.col, b.row, b.col) <= rad_sq)
            grid.at(r, c) = 1.f;
    }
  }
  return grid;
}

// Expected number of fixed-size samples covering the training area:
// floor(S_train / size^2), at least 1.
inline std::uint64_t epoch_size(const GeoRegion& region, const SplitLayout& split,
                                int tile_size = 224) {
  region.validate();
  split.validate(region);
  long long area = 0;
  if (split.train.empty()) {
    area = static_cast<long long>(region.width_px) * region.height_px;
    for (const Rect& r : split.excluded())
      area -= r.clipped(region.width_px, region.height_px).area();
  } else {
    for (const Rect& tr : split.train) {
      area += tr.area();
      for (const Rect& r : split.excluded()) {
        const Rect c{std::max(tr.x0, r.x0), std::max(tr.y0, r.y0),
                     std::min(tr.x1(), r.x1()) - std::max(tr.x0, r.x0),
                     std::min(tr.y1(), r.y1()) - std::max(tr.y0, r.y0)};
        if (!c.empty()) area -= c.area();
      }
    }
  }
  const long long denom = static_cast<long long>(tile_size) * tile_size;
  return static_cast<std::uint64_t>(std::max(1LL, area / denom));
}

// Draws tile corners uniformly over the admissible set: crops fully inside
// the region (or the train rects when given) and disjoint from every val and
// test rect. Exact uniformity comes from indexing the admissible lattice via
// per-row prefix counts.
class TileSampler {
 public:
  TileSampler(const GeoRegion& region, const SplitLayout& split, int tile_size,
              std::uint64_t seed)
      : size_(tile_size), rng_(seed) {
    region.validate();
    split.validate(region);
    if (tile_size <= 0 || tile_size > region.width_px || tile_size > region.height_px)
      throw std::invalid_argument("sampler: tile does not fit in region");
    const int max_row = region.height_px - tile_size;
    const int max_col = region.width_px - tile_size;

    // Forbidden corner intervals induced by an excluded rect.
    for (const Rect& r : split.excluded()) {
      Forbidden f;
      f.row_lo = std::max(0, r.y0 - tile_size + 1);
      f.row_hi = std::min(max_row, r.y1() - 1);
      f.col_lo = std::max(0, r.x0 - tile_size + 1);
      f.col_hi = std::min(max_col, r.x1() - 1);
      if (f.row_lo <= f.row_hi && f.col_lo <= f.col_hi) forbidden_.push_back(f);
    }
    if (!split.train.empty()) {
      for (const Rect& r : split.train) {
        Domain d;
        d.row_lo = r.y0;
        d.row_hi = std::min(max_row, r.y1() - tile_size);
        d.col_lo = r.x0;
        d.col_hi = std::min(max_col, r.x1() - tile_size);
        if (d.row_lo <= d.row_hi && d.col_lo <= d.col_hi) domains_.push_back(d);
      }
    } else {
      domains_.push_back({0, max_row, 0, max_col, {}});
    }

    // Cumulative admissible-corner counts per (domain, row).
    for (Domain& d : domains_) {
      d.row_prefix.reserve(d.row_hi - d.row_lo + 1);
      std::uint64_t acc = 0;
      for (int row = d.row_lo; row <= d.row_hi; ++row) {
        acc += count_row(d, row);
        d.row_prefix.push_back(acc);
      }
      total_ += acc;
    }
    if (total_ == 0) throw std::runtime_error("sampler: no admissible tile position");
  }

  std::uint64_t admissible_count() const { return total_; }

  // Corner (row, col) of the next tile.
  std::pair<int, int> draw() {
    std::uint64_t k = rng_.below(total_);
    for (const Domain& d : domains_) {
      const std::uint64_t dom_total = d.row_prefix.back();
      if (k >= dom_total) {
        k -= dom_total;
        continue;
      }
      const auto it = std::upper_bound(d.row_prefix.begin(), d.row_prefix.end(), k);
      const std::size_t ri = static_cast<std::size_t>(it - d.row_prefix.begin());
      const int row = d.row_lo + static_cast<int>(ri);
      const std::uint64_t rem = k - (ri == 0 ? 0 : d.row_prefix[ri - 1]);
      return {row, pick_col(d, row, rem)};
    }
    throw std::logic_error("sampler: index walk failed");
  }

 private:
  struct Forbidden {
    int row_lo, row_hi, col_lo, col_hi;
  };
  struct Domain {
    int row_lo, row_hi, col_lo, col_hi;
    std::vector<std::uint64_t> row_prefix;
  };

  std::vector<std::pair<int, int>> blocked_spans(const Domain& d, int row) const {
    std::vector<std::pair<int, int>> spans;
    for (const Forbidden& f : forbidden_)
      if (row >= f.row_lo && row <= f.row_hi) {
        const int lo = std::max(d.col_lo, f.col_lo);
        const int hi = std::min(d.col_hi, f.col_hi);
        if (lo <= hi) spans.emplace_back(lo, hi);
      }
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<int, int>> merged;
    for (const auto& s : spans) {
      if (!merged.empty() && s.first <= merged.back().second + 1)
        merged.back().second = std::max(merged.back().second, s.second);
      else
        merged.push_back(s);
    }
    return merged;
  }

  std::uint64_t count_row(const Domain& d, int row) const {
    std::uint64_t n = static_cast<std::uint64_t>(d.col_hi - d.col_lo + 1);
    for (const auto& s : blocked_spans(d, row)) n -= static_cast<std::uint64_t>(s.second - s.first + 1);
    return n;
  }

  // The rem-th admissible column of a row, in increasing order.
  int pick_col(const Domain& d, int row, std::uint64_t rem) const {
    int col = d.col_lo;
    for (const auto& s : blocked_spans(d, row)) {
      const std::uint64_t gap = s.first > col ? static_cast<std::uint64_t>(s.first - col) : 0;
      if (rem < gap) return col + static_cast<int>(rem);
      rem -= gap;
      col = s.second + 1;
    }
    return col + static_cast<int>(rem);
  }

  int size_;
  Rng rng_;
  std::vector<Forbidden> forbidden_;
  std::vector<Domain> domains_;
  std::uint64_t total_ = 0;
};

// Region-level raster stack the sampler crops from.
struct RegionRasters {
  std::array<RasterGrid, 3> image;
  RasterGrid traj;
  RasterGrid label;
};

inline TileSample crop_tile(const RegionRasters& rasters, int row, int col, int size) {
  auto crop = [&](const RasterGrid& src, RasterKind kind) {
    if (row < 0 || col < 0 || row + size > src.height || col + size > src.width)
      throw std::invalid_argument("crop: window outside raster");
    RasterGrid out(size, size, kind);
    for (int r = 0; r < size; ++r)
      std::copy_n(&src.at(row + r, col), size, &out.at(r, 0));
    return out;
  };
  TileSample tile;
  for (int ch = 0; ch < 3; ++ch)
    tile.image[ch] = crop(rasters.image[ch], RasterKind::image_channel);
  tile.traj = crop(rasters.traj, RasterKind::traj_scaled);
  tile.label = crop(rasters.label, RasterKind::label);
  tile.origin_row = row;
  tile.origin_col = col;
  return tile;
}

inline TileSample sample_tile(TileSampler& sampler, const RegionRasters& rasters, int size) {
  const auto [row, col] = sampler.draw();
  return crop_tile(rasters, row, col, size);
}

namespace detail {

// Pixel bounds of a quadrant, mathematical numbering (1 top-right,
// counterclockwise).
inline Rect quadrant_rect(int quadrant, int height, int width) {
  const int hh = height / 2, hw = width / 2;
  switch (quadrant) {
    case 1: return Rect{hw, 0, width - hw, hh};
    case 2: return Rect{0, 0, hw, hh};
    case 3: return Rect{0, hh, hw, height - hh};
    case 4: return Rect{hw, hh, width - hw, height - hh};
  }
  throw std::invalid_argument("quadrant must be 1..4");
}

inline void zero_rect(RasterGrid& g, const Rect& r) {
  for (int y = r.y0; y < r.y1(); ++y)
    std::fill_n(&g.at(y, r.x0), r.w, 0.f);
}

}  // namespace detail

// Zero-fills one quadrant of the image channels and a different quadrant of
// the trajectory channel; the label is untouched. Idempotent.
inline TileSample apply_info_loss(const TileSample& tile, const AttackSpec& spec) {
  spec.validate();
  if (tile.height() % 2 != 0 || tile.width() % 2 != 0)
    throw std::invalid_argument("info loss: tile not partitionable into quadrants");
  TileSample out = tile;
  const Rect img_q = detail::quadrant_rect(spec.image_quadrant, tile.height(), tile.width());
  const Rect trj_q = detail::quadrant_rect(spec.traj_quadrant, tile.height(), tile.width());
  for (auto& ch : out.image) detail::zero_rect(ch, img_q);
  detail::zero_rect(out.traj, trj_q);
  return out;
}

// Box-downsample by `factor` then nearest-neighbor upsample back, per channel.
inline RasterGrid blur_raster(const RasterGrid& src, int factor) {
  if (factor < 1) throw std::invalid_argument("blur: factor must be >= 1");
  if (factor == 1) return src;
  if (src.height % factor != 0 || src.width % factor != 0)
    throw std::invalid_argument("blur: dimensions not divisible by factor");
  RasterGrid out(src.height, src.width, src.kind);
  const int bh = src.height / factor, bw = src.width / factor;
  for (int by = 0; by < bh; ++by)
    for (int bx = 0; bx < bw; ++bx) {
      double acc = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += src.at(by * factor + dy, bx * factor + dx);
      const float mean = static_cast<float>(acc / (static_cast<double>(factor) * factor));
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) out.at(by * factor + dy, bx * factor + dx) = mean;
    }
  return out;
}

// Image-quality degradation only; blur factor 1 is the identity.
inline TileSample degrade(const TileSample& tile, int image_blur_factor) {
  TileSample out = tile;
  for (auto& ch : out.image) ch = blur_raster(ch, image_blur_factor);
  return out;
}

// Full degradation: image blur plus trajectory localization noise. The
// trajectory channel is re-rasterized from the points covering the tile, so
// sigma 0 keeps the stored channel untouched.
inline TileSample degrade(const TileSample& tile, int image_blur_factor,
                          double gps_noise_sigma_m, std::span<const TrajectoryPoint> points,
                          const GeoRegion& tile_region, int traj_cap, Rng& rng) {
  TileSample out = degrade(tile, image_blur_factor);
  if (gps_noise_sigma_m > 0) {
    RasterGrid counts = rasterize_trajectories_noisy(points, tile_region, gps_noise_sigma_m, rng);
    out.traj = scale_traj(counts, traj_cap);
  }
  return out;
}

}  // namespace ddm
