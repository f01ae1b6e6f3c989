#pragma once

#include <stdexcept>

#include "ddm/data/batch.hpp"
#include "ddm/geo/geodata.hpp"
#include "ddm/io/png.hpp"
#include "ddm/model/network.hpp"

namespace ddm {

namespace detail {

// Copies a window (possibly reaching outside the raster) into a batch tensor
// channel, zero-filling beyond the region border.
template <typename S>
void copy_window(const RasterGrid& src, int top, int left, Tensor<S>& dst, int sample, int ch) {
  for (int y = 0; y < dst.h; ++y) {
    const int sy = top + y;
    if (sy < 0 || sy >= src.height) continue;
    S* out = dst.plane(sample, ch) + static_cast<std::size_t>(y) * dst.w;
    for (int x = 0; x < dst.w; ++x) {
      const int sx = left + x;
      if (sx < 0 || sx >= src.width) continue;
      out[x] = static_cast<S>(src.at(sy, sx));
    }
  }
}

}  // namespace detail

// Road probability over one context window of twice the tile size; callers
// keep the central tile.
template <typename S>
Tensor<S> predict_window(const DeepDualMapper<S>& model, const RegionRasters& rasters, int top,
                         int left, int window) {
  Tensor<S> image(1, 3, window, window), traj(1, 1, window, window);
  for (int ch = 0; ch < 3; ++ch)
    detail::copy_window(rasters.image[ch], top, left, image, 0, ch);
  detail::copy_window(rasters.traj, top, left, traj, 0, 0);
  Tape<S> tape(false);
  const auto fwd = model.forward(tape, tape.input(image), tape.input(traj), false);
  return tape.val(fwd.output);
}

// Stitched full-rectangle inference: every tile-sized cell of `rect` is
// predicted from a centered window of twice the tile size (zero-padded at
// region borders) and only the central crop is kept. The binary map uses a
// 0.5 threshold on the refined road probability.
template <typename S>
RasterGrid stitch_predict(const DeepDualMapper<S>& model, const RegionRasters& rasters,
                          const Rect& rect, int tile = 224) {
  if (rect.empty()) throw std::invalid_argument("stitch: empty rectangle");
  if (rect.w % tile != 0 || rect.h % tile != 0)
    throw std::invalid_argument("stitch: rectangle is not a multiple of the tile size");
  const int margin = tile / 2;
  RasterGrid out(rect.h, rect.w, RasterKind::label);
  for (int cy = 0; cy < rect.h / tile; ++cy)
    for (int cx = 0; cx < rect.w / tile; ++cx) {
      const int cell_top = rect.y0 + cy * tile;
      const int cell_left = rect.x0 + cx * tile;
      const Tensor<S> prob =
          predict_window(model, rasters, cell_top - margin, cell_left - margin, 2 * tile);
      for (int y = 0; y < tile; ++y)
        for (int x = 0; x < tile; ++x)
          out.at(cy * tile + y, cx * tile + x) =
              prob.at(0, 0, margin + y, margin + x) >= S(0.5) ? 1.f : 0.f;
    }
  return out;
}

// False-color comparison against ground truth: white = hit, black = correct
// background, red = missed road, blue = false road.
inline ImageRgb8 error_overlay(const RasterGrid& pred, const RasterGrid& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("overlay: shape mismatch");
  ImageRgb8 img;
  img.height = pred.height;
  img.width = pred.width;
  img.v.assign(static_cast<std::size_t>(pred.height) * pred.width * 3, 0);
  for (int r = 0; r < pred.height; ++r)
    for (int c = 0; c < pred.width; ++c) {
      const bool p = pred.at(r, c) > 0.5f, g = gt.at(r, c) > 0.5f;
      std::uint8_t rgb[3] = {0, 0, 0};
      if (p && g) rgb[0] = rgb[1] = rgb[2] = 255;
      if (!p && g) rgb[0] = 255;  // false negative
      if (p && !g) rgb[2] = 255;  // false positive
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = rgb[ch];
    }
  return img;
}

}  // namespace ddm
