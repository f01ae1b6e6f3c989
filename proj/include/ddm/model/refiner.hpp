#pragma once

#include <array>
#include <string>

#include "ddm/core/tensor.hpp"
#include "ddm/nn/modules.hpp"

namespace ddm {

// Residual refinement stage for one level: upsample the refined features
// from the level below, concatenate with the fused features of this level,
// reduce back to the level width, and add onto the fused features.
template <typename S>
class RefineBlock {
 public:
  RefineBlock(ParamRegistry<S>& reg, const std::string& prefix, int coarser_c, int channels,
              Rng& rng)
      : up_(reg, prefix + ".up", coarser_c, channels, rng),
        conv1_(reg, prefix + ".conv1", 2 * channels, channels, 3, rng),
        conv2_(reg, prefix + ".conv2", channels, channels, 3, rng) {}

  Var operator()(Tape<S>& t, Var fused, Var refined_below, bool train) const {
    Var h = concat_channels(t, up_(t, refined_below), fused);
    Var residual = conv2_(t, conv1_(t, h, train), train);
    return add(t, fused, residual);
  }

  ConvBnRelu<S>& final_conv() { return conv2_; }

 private:
  ConvTranspose2x<S> up_;
  ConvBnRelu<S> conv1_, conv2_;
};

// Per-level shared predictor: 1x1 linear map to 2 classes plus softmax. The
// same instance serves the image, trajectory, fused and refined streams of
// its level, which is what ties their feature spaces together.
template <typename S>
class LevelPredictor {
 public:
  LevelPredictor(ParamRegistry<S>& reg, const std::string& prefix, int channels, Rng& rng)
      : fc_(reg, prefix + ".fc", channels, 2, 1, rng) {}

  // Road probability map [n,1,h,w]; class channel 1 is road.
  Var operator()(Tape<S>& t, Var features) const {
    Var probs = softmax_pair(t, fc_(t, features));
    return slice_channels(t, probs, 1, 1);
  }

 private:
  Conv2d<S> fc_;
};

// Soft ground-truth pyramid: level 5 is the binary label, each coarser level
// is the 2x2 block mean of the level above, i.e. the road coverage ratio.
template <typename S>
std::array<Tensor<S>, 5> build_label_pyramid(const Tensor<S>& label) {
  if (label.h % 16 != 0 || label.w % 16 != 0)
    throw std::invalid_argument("label pyramid: dims must be divisible by 16, got " +
                                label.shape_str());
  std::array<Tensor<S>, 5> py;
  py[4] = label;
  for (int i = 3; i >= 0; --i) {
    const Tensor<S>& src = py[i + 1];
    Tensor<S> dst(src.n, src.c, src.h / 2, src.w / 2);
    for (int b = 0; b < src.n; ++b)
      for (int ch = 0; ch < src.c; ++ch) {
        const S* sp = src.plane(b, ch);
        S* dp = dst.plane(b, ch);
        for (int y = 0; y < dst.h; ++y)
          for (int x = 0; x < dst.w; ++x) {
            const std::size_t o = static_cast<std::size_t>(2 * y) * src.w + 2 * x;
            dp[static_cast<std::size_t>(y) * dst.w + x] =
                (sp[o] + sp[o + 1] + sp[o + src.w] + sp[o + src.w + 1]) / S(4);
          }
      }
    py[i] = std::move(dst);
  }
  return py;
}

}  // namespace ddm
