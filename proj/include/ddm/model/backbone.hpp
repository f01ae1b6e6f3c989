#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "ddm/nn/modules.hpp"

namespace ddm {

// Pyramid levels run coarse to fine: level 1 is the 16x-downsampled
// bottleneck, level 5 is input resolution.
struct LevelSpec {
  int level = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
};

// Channel width at a pyramid level given the level-5 (finest) width.
inline int level_channels(int level, int base_channels) {
  if (level < 1 || level > 5) throw std::invalid_argument("level must be 1..5");
  return base_channels << (5 - level);
}

inline LevelSpec level_spec(int level, int input_h, int input_w, int base_channels) {
  const int down = 1 << (5 - level);
  if (input_h % 16 != 0 || input_w % 16 != 0)
    throw std::invalid_argument("input dims must be divisible by 16");
  return LevelSpec{level, input_h / down, input_w / down, level_channels(level, base_channels)};
}

// VGG-style encoder: four (conv-bn-relu)x2 + maxpool stages and a bottleneck
// pair, skips captured before each pool.
template <typename S>
class Encoder {
 public:
  struct Features {
    std::array<Var, 4> skips;  // conv1-2 (full res) .. conv4-2
    Var bottleneck;            // conv5-2
  };

  Encoder(ParamRegistry<S>& reg, const std::string& prefix, int in_c, int base, Rng& rng)
      : conv1_1_(reg, prefix + ".conv1-1", in_c, base, 3, rng),
        conv1_2_(reg, prefix + ".conv1-2", base, base, 3, rng),
        conv2_1_(reg, prefix + ".conv2-1", base, 2 * base, 3, rng),
        conv2_2_(reg, prefix + ".conv2-2", 2 * base, 2 * base, 3, rng),
        conv3_1_(reg, prefix + ".conv3-1", 2 * base, 4 * base, 3, rng),
        conv3_2_(reg, prefix + ".conv3-2", 4 * base, 4 * base, 3, rng),
        conv4_1_(reg, prefix + ".conv4-1", 4 * base, 8 * base, 3, rng),
        conv4_2_(reg, prefix + ".conv4-2", 8 * base, 8 * base, 3, rng),
        conv5_1_(reg, prefix + ".conv5-1", 8 * base, 16 * base, 3, rng),
        conv5_2_(reg, prefix + ".conv5-2", 16 * base, 16 * base, 3, rng) {}

  Features operator()(Tape<S>& t, Var x, bool train) const {
    Features f;
    Var h = conv1_2_(t, conv1_1_(t, x, train), train);
    f.skips[0] = h;
    h = conv2_2_(t, conv2_1_(t, maxpool2x2(t, h), train), train);
    f.skips[1] = h;
    h = conv3_2_(t, conv3_1_(t, maxpool2x2(t, h), train), train);
    f.skips[2] = h;
    h = conv4_2_(t, conv4_1_(t, maxpool2x2(t, h), train), train);
    f.skips[3] = h;
    f.bottleneck = conv5_2_(t, conv5_1_(t, maxpool2x2(t, h), train), train);
    return f;
  }

 private:
  ConvBnRelu<S> conv1_1_, conv1_2_, conv2_1_, conv2_2_, conv3_1_, conv3_2_, conv4_1_, conv4_2_,
      conv5_1_, conv5_2_;
};

// U-Net decoder used as the per-modality auxiliary decoder. Emits the
// multi-scale activation pyramid: level 1 is the bottleneck itself, levels
// 2..5 are the outputs of the four decoding stages.
template <typename S>
class AuxDecoder {
 public:
  AuxDecoder(ParamRegistry<S>& reg, const std::string& prefix, int base, Rng& rng)
      : deconv4_1_(reg, prefix + ".deconv4-1", 16 * base, 8 * base, rng),
        conv4_3_(reg, prefix + ".conv4-3", 16 * base, 8 * base, 3, rng),
        conv4_4_(reg, prefix + ".conv4-4", 8 * base, 8 * base, 3, rng),
        deconv3_1_(reg, prefix + ".deconv3-1", 8 * base, 4 * base, rng),
        conv3_3_(reg, prefix + ".conv3-3", 8 * base, 4 * base, 3, rng),
        conv3_4_(reg, prefix + ".conv3-4", 4 * base, 4 * base, 3, rng),
        deconv2_1_(reg, prefix + ".deconv2-1", 4 * base, 2 * base, rng),
        conv2_3_(reg, prefix + ".conv2-3", 4 * base, 2 * base, 3, rng),
        conv2_4_(reg, prefix + ".conv2-4", 2 * base, 2 * base, 3, rng),
        deconv1_1_(reg, prefix + ".deconv1-1", 2 * base, base, rng),
        conv1_3_(reg, prefix + ".conv1-3", 2 * base, base, 3, rng),
        conv1_4_(reg, prefix + ".conv1-4", base, base, 3, rng) {}

  std::array<Var, 5> operator()(Tape<S>& t, const typename Encoder<S>::Features& enc,
                                bool train) const {
    std::array<Var, 5> f;
    f[0] = enc.bottleneck;
    Var h = concat_channels(t, deconv4_1_(t, f[0]), enc.skips[3]);
    f[1] = conv4_4_(t, conv4_3_(t, h, train), train);
    h = concat_channels(t, deconv3_1_(t, f[1]), enc.skips[2]);
    f[2] = conv3_4_(t, conv3_3_(t, h, train), train);
    h = concat_channels(t, deconv2_1_(t, f[2]), enc.skips[1]);
    f[3] = conv2_4_(t, conv2_3_(t, h, train), train);
    h = concat_channels(t, deconv1_1_(t, f[3]), enc.skips[0]);
    f[4] = conv1_4_(t, conv1_3_(t, h, train), train);
    return f;
  }

 private:
  ConvTranspose2x<S> deconv4_1_;
  ConvBnRelu<S> conv4_3_, conv4_4_;
  ConvTranspose2x<S> deconv3_1_;
  ConvBnRelu<S> conv3_3_, conv3_4_;
  ConvTranspose2x<S> deconv2_1_;
  ConvBnRelu<S> conv2_3_, conv2_4_;
  ConvTranspose2x<S> deconv1_1_;
  ConvBnRelu<S> conv1_3_, conv1_4_;
};

// One modality branch: encoder plus auxiliary decoder. The two branches of
// the model share this structure but never parameters.
template <typename S>
class UNetBranch {
 public:
  UNetBranch(ParamRegistry<S>& reg, const std::string& prefix, int in_c, int base, Rng& rng)
      : encoder_(reg, prefix, in_c, base, rng), decoder_(reg, prefix, base, rng) {}

  std::array<Var, 5> operator()(Tape<S>& t, Var x, bool train) const {
    return decoder_(t, encoder_(t, x, train), train);
  }

 private:
  Encoder<S> encoder_;
  AuxDecoder<S> decoder_;
};

}  // namespace ddm
