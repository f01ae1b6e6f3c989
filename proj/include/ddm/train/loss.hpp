#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "ddm/autograd/ops.hpp"
#include "ddm/model/network.hpp"

namespace ddm {

// Per-stream supervision weights, applied uniformly across the five levels.
struct LossWeights {
  double image = 0.5;
  double traj = 0.5;
  double fused = 0.5;
  double refined = 1.0;

  void validate() const {
    if (image < 0 || traj < 0 || fused < 0 || refined < 0)
      throw std::invalid_argument("loss weights must be non-negative");
  }
};

template <typename S>
struct LossBreakdown {
  Var total;  // weighted sum of the 20 per-level, per-stream terms
  // Unweighted per-stream sums over levels, for logging.
  double image = 0, traj = 0, fused = 0, refined = 0;
};

// Cross-entropy supervision of all four streams at all five levels against
// the soft label pyramid: 20 terms, each a pixel mean, combined as a
// weighted sum.
template <typename S>
LossBreakdown<S> supervision_loss(Tape<S>& t, const typename DeepDualMapper<S>::Forward& f,
                                  const std::array<Tensor<S>, 5>& pyramid,
                                  const LossWeights& w) {
  w.validate();
  std::vector<Var> terms;
  std::vector<S> weights;
  terms.reserve(20);
  weights.reserve(20);
  LossBreakdown<S> out;
  for (int i = 0; i < 5; ++i) {
    const Var li = pixel_ce(t, f.pred_image[i], pyramid[i]);
    const Var lt = pixel_ce(t, f.pred_traj[i], pyramid[i]);
    const Var lf = pixel_ce(t, f.pred_fused[i], pyramid[i]);
    const Var lr = pixel_ce(t, f.pred_refined[i], pyramid[i]);
    terms.insert(terms.end(), {li, lt, lf, lr});
    weights.insert(weights.end(),
                   {static_cast<S>(w.image), static_cast<S>(w.traj), static_cast<S>(w.fused),
                    static_cast<S>(w.refined)});
    out.image += t.val(li).v[0];
    out.traj += t.val(lt).v[0];
    out.fused += t.val(lf).v[0];
    out.refined += t.val(lr).v[0];
  }
  out.total = weighted_sum(t, terms, weights);
  return out;
}

}  // namespace ddm
