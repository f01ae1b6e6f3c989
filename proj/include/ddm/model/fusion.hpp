#pragma once

#include <optional>
#include <string>
#include <utility>

#include "ddm/nn/modules.hpp"

namespace ddm {

// Gated fusion for one pyramid level. Adapters move both modality features
// into a shared space; the selector turns their concatenation into two gate
// logits which refine the coarser level's decision.
template <typename S>
class GatedFusion {
 public:
  GatedFusion(ParamRegistry<S>& reg, const std::string& prefix, int channels, Rng& rng)
      : adapt_image_(reg, prefix + ".adapt_image", channels, channels, 1, rng),
        adapt_traj_(reg, prefix + ".adapt_traj", channels, channels, 1, rng),
        sel1_(reg, prefix + ".sel1", 2 * channels, 2 * channels, 3, rng),
        sel2_(reg, prefix + ".sel2", 2 * channels, 2 * channels, 3, rng),
        logits_(reg, prefix + ".logits", 2 * channels, 2, 1, rng) {}

  // Channel-preserving 1x1 maps, one per modality.
  std::pair<Var, Var> adapt(Tape<S>& t, Var feat_image, Var feat_traj) const {
    return {adapt_image_(t, feat_image), adapt_traj_(t, feat_traj)};
  }

  // Gate logit residual: concat -> two 3x3 conv-bn-relu blocks -> 1x1 to 2.
  Var gate_delta(Tape<S>& t, Var adapted_image, Var adapted_traj, bool train) const {
    Var h = concat_channels(t, adapted_image, adapted_traj);
    return logits_(t, sel2_(t, sel1_(t, h, train), train));
  }

  Conv2d<S>& logits_head() { return logits_; }

 private:
  Conv2d<S> adapt_image_, adapt_traj_;
  ConvBnRelu<S> sel1_, sel2_;
  Conv2d<S> logits_;
};

// Recursive gate-logit update. At the coarsest level there is no previous
// decision: the prior is zero, so the logits are just the residual. Finer
// levels add their residual onto the 2x nearest-neighbor upsampled logits
// from below.
template <typename S>
Var update_gates(Tape<S>& t, std::optional<Var> prev_logits, Var delta) {
  if (!prev_logits) return delta;
  Var up = upsample_nearest2x(t, *prev_logits);
  return add(t, up, delta);
}

// Two-way per-pixel softmax; the result satisfies the complementary
// constraint by construction.
template <typename S>
Var normalize_gates(Tape<S>& t, Var logits) {
  return softmax_pair(t, logits);
}

// Convex combination of the adapted features under the normalized gates.
template <typename S>
Var fuse(Tape<S>& t, Var adapted_image, Var adapted_traj, Var gates) {
  return gate_blend(t, gates, adapted_image, adapted_traj);
}

}  // namespace ddm
