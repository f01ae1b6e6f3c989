#pragma once

#include <span>
#include <stdexcept>

#include "ddm/core/tensor.hpp"
#include "ddm/geo/types.hpp"

namespace ddm {

template <typename S>
struct Batch {
  Tensor<S> image;  // [n,3,h,w]
  Tensor<S> traj;   // [n,1,h,w]
  Tensor<S> label;  // [n,1,h,w]
};

// Stacks tiles into batch tensors.
template <typename S>
Batch<S> make_batch(std::span<const TileSample> tiles) {
  if (tiles.empty()) throw std::invalid_argument("batch: no tiles");
  const int n = static_cast<int>(tiles.size());
  const int h = tiles[0].height(), w = tiles[0].width();
  Batch<S> b{Tensor<S>(n, 3, h, w), Tensor<S>(n, 1, h, w), Tensor<S>(n, 1, h, w)};
  for (int i = 0; i < n; ++i) {
    const TileSample& tile = tiles[i];
    tile.validate();
    if (tile.height() != h || tile.width() != w)
      throw std::invalid_argument("batch: inconsistent tile sizes");
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t j = 0; j < tile.image[ch].v.size(); ++j)
        b.image.plane(i, ch)[j] = static_cast<S>(tile.image[ch].v[j]);
    for (std::size_t j = 0; j < tile.traj.v.size(); ++j)
      b.traj.plane(i, 0)[j] = static_cast<S>(tile.traj.v[j]);
    for (std::size_t j = 0; j < tile.label.v.size(); ++j)
      b.label.plane(i, 0)[j] = static_cast<S>(tile.label.v[j]);
  }
  return b;
}

}  // namespace ddm
