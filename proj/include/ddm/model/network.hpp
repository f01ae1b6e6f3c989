#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddm/model/backbone.hpp"
#include "ddm/model/fusion.hpp"
#include "ddm/model/refiner.hpp"

namespace ddm {

struct ModelConfig {
  int base_channels = 16;  // level-5 width; level 1 is 16x this
  int image_channels = 3;
  int traj_channels = 1;

  void validate() const {
    if (base_channels < 1) throw std::invalid_argument("model: base_channels must be >= 1");
    if (image_channels < 1 || traj_channels < 1)
      throw std::invalid_argument("model: channel counts must be >= 1");
  }
};

// Dual-branch road extractor: two independent U-Net branches, per-level
// gated fusion, residual refinement across levels and a shared per-level
// predictor over the four supervised feature streams.
template <typename S>
class DeepDualMapper {
 public:
  struct Forward {
    // Activation pyramids, index 0 = level 1 (coarsest).
    std::array<Var, 5> adapted_image, adapted_traj, fused, refined;
    std::array<Var, 5> gate_logits;  // [n,2,h,w] before softmax
    std::array<Var, 5> gates;        // normalized, channel 0 image / 1 trajectory
    // Road-probability maps per level and stream, each [n,1,h,w].
    std::array<Var, 5> pred_image, pred_traj, pred_fused, pred_refined;
    // Model output: refined level-5 road probability.
    Var output;
  };

  DeepDualMapper(const DeepDualMapper&) = delete;
  DeepDualMapper& operator=(const DeepDualMapper&) = delete;

  DeepDualMapper(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(init_seed);
    const int base = cfg.base_channels;
    image_branch_.emplace(reg_, "image", cfg.image_channels, base, rng);
    traj_branch_.emplace(reg_, "traj", cfg.traj_channels, base, rng);
    for (int level = 1; level <= 5; ++level) {
      const int c = level_channels(level, base);
      gfm_.emplace_back(reg_, "gfm" + std::to_string(level), c, rng);
      pred_.emplace_back(reg_, "pred" + std::to_string(level), c, rng);
      if (level >= 2)
        refine_.emplace_back(reg_, "ref" + std::to_string(level),
                             level_channels(level - 1, base), c, rng);
    }
  }

  Forward forward(Tape<S>& t, Var image, Var traj, bool train) const {
    const auto& iv = t.val(image);
    const auto& tv = t.val(traj);
    if (iv.c != cfg_.image_channels || tv.c != cfg_.traj_channels)
      throw std::invalid_argument("forward: unexpected channel counts");
    if (iv.h != tv.h || iv.w != tv.w || iv.n != tv.n)
      throw std::invalid_argument("forward: image/trajectory shape mismatch");
    if (iv.h % 16 != 0 || iv.w % 16 != 0)
      throw std::invalid_argument("forward: input dims must be divisible by 16");

    Forward f;
    const auto feat_image = (*image_branch_)(t, image, train);
    const auto feat_traj = (*traj_branch_)(t, traj, train);

    std::optional<Var> prev_logits;
    for (int i = 0; i < 5; ++i) {
      auto [ai, at] = gfm_[i].adapt(t, feat_image[i], feat_traj[i]);
      f.adapted_image[i] = ai;
      f.adapted_traj[i] = at;
      Var delta = gfm_[i].gate_delta(t, ai, at, train);
      f.gate_logits[i] = update_gates(t, prev_logits, delta);
      prev_logits = f.gate_logits[i];
      f.gates[i] = normalize_gates(t, f.gate_logits[i]);
      f.fused[i] = fuse(t, ai, at, f.gates[i]);
      f.refined[i] = i == 0 ? f.fused[0] : refine_[i - 1](t, f.fused[i], f.refined[i - 1], train);
      f.pred_image[i] = pred_[i](t, ai);
      f.pred_traj[i] = pred_[i](t, at);
      f.pred_fused[i] = pred_[i](t, f.fused[i]);
      f.pred_refined[i] = pred_[i](t, f.refined[i]);
    }
    f.output = f.pred_refined[4];
    return f;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry<S>& registry() { return reg_; }
  const ParamRegistry<S>& registry() const { return reg_; }

  GatedFusion<S>& gfm(int level) { return gfm_.at(level - 1); }
  RefineBlock<S>& refine_block(int level) { return refine_.at(level - 2); }
  LevelPredictor<S>& predictor(int level) { return pred_.at(level - 1); }

 private:
  ModelConfig cfg_;
  ParamRegistry<S> reg_;
  std::optional<UNetBranch<S>> image_branch_, traj_branch_;
  std::vector<GatedFusion<S>> gfm_;
  std::vector<RefineBlock<S>> refine_;
  std::vector<LevelPredictor<S>> pred_;
};

}  // namespace ddm
