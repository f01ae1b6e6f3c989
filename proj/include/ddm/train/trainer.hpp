#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "ddm/data/batch.hpp"
#include "ddm/geo/types.hpp"
#include "ddm/io/ftz.hpp"
#include "ddm/model/network.hpp"
#include "ddm/train/adam.hpp"
#include "ddm/train/loss.hpp"

namespace ddm {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string diagnostic_dir;  // where a diverging batch gets dumped

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("train: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  }
};

struct StepStats {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double total = 0;
  double image = 0, traj = 0, fused = 0, refined = 0;  // per-stream level sums
  double lr = 0;

  nlohmann::json to_json() const {
    return {{"step", step},           {"epoch", epoch}, {"total_loss", total},
            {"loss_image", image},    {"loss_traj", traj}, {"loss_fused", fused},
            {"loss_refined", refined}, {"lr", lr}};
  }
};

// Owns the optimizer and performs single optimization steps; epoch
// scheduling, checkpoints and validation live with the caller.
template <typename S>
class Trainer {
 public:
  Trainer(DeepDualMapper<S>& model, const TrainConfig& cfg, const LossWeights& weights)
      : model_(model),
        cfg_(cfg),
        weights_(weights),
        opt_(model.registry(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps) {
    cfg.validate();
    weights.validate();
  }

  StepStats train_step(const Batch<S>& batch, std::int64_t epoch = 0) {
    model_.registry().zero_grad();
    Tape<S> tape;
    Var image = tape.input(batch.image);
    Var traj = tape.input(batch.traj);
    auto fwd = model_.forward(tape, image, traj, /*train=*/true);
    const auto pyramid = build_label_pyramid(batch.label);
    auto loss = supervision_loss(tape, fwd, pyramid, weights_);
    const double total = tape.val(loss.total).v[0];
    if (!std::isfinite(total)) {
      dump_divergent_batch(batch, total);
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(opt_.step_count() + 1));
    }
    tape.backward(loss.total);
    opt_.step();

    StepStats stats;
    stats.step = opt_.step_count();
    stats.epoch = epoch;
    stats.total = total;
    stats.image = loss.image;
    stats.traj = loss.traj;
    stats.fused = loss.fused;
    stats.refined = loss.refined;
    stats.lr = cfg_.learning_rate;
    return stats;
  }

  Adam<S>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const LossWeights& weights() const { return weights_; }

 private:
  void dump_divergent_batch(const Batch<S>& batch, double loss_value) const {
    if (cfg_.diagnostic_dir.empty()) return;
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.diagnostic_dir);
    auto dump_tensor = [&](const Tensor<S>& t, const std::string& stem, RasterKind kind) {
      for (int i = 0; i < t.n; ++i)
        for (int ch = 0; ch < t.c; ++ch) {
          RasterGrid g(t.h, t.w, kind);
          for (std::size_t j = 0; j < g.v.size(); ++j)
            g.v[j] = static_cast<float>(t.plane(i, ch)[j]);
          write_ftz((fs::path(cfg_.diagnostic_dir) /
                     (stem + "_n" + std::to_string(i) + "_c" + std::to_string(ch) + ".ftz"))
                        .string(),
                    g);
        }
    };
    dump_tensor(batch.image, "image", RasterKind::image_channel);
    dump_tensor(batch.traj, "traj", RasterKind::traj_scaled);
    dump_tensor(batch.label, "label", RasterKind::label);
    std::ofstream info(fs::path(cfg_.diagnostic_dir) / "divergence.json");
    info << nlohmann::json{{"step", opt_.step_count() + 1}, {"loss", loss_value}}.dump(2)
         << '\n';
  }

  DeepDualMapper<S>& model_;
  TrainConfig cfg_;
  LossWeights weights_;
  Adam<S> opt_;
};

}  // namespace ddm
