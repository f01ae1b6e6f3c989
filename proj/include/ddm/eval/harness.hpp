#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddm/core/rng.hpp"
#include "ddm/data/batch.hpp"
#include "ddm/eval/metrics.hpp"
#include "ddm/geo/geodata.hpp"
#include "ddm/model/network.hpp"

namespace ddm {

// Direct (unstitched) prediction of one tile, thresholded at 0.5.
template <typename S>
RasterGrid predict_tile(const DeepDualMapper<S>& model, const TileSample& tile,
                        Tensor<S>* gates_l5 = nullptr) {
  const Batch<S> batch = make_batch<S>(std::span<const TileSample>{&tile, 1});
  Tape<S> tape(false);
  const auto fwd = model.forward(tape, tape.input(batch.image), tape.input(batch.traj), false);
  const Tensor<S>& prob = tape.val(fwd.output);
  if (gates_l5) *gates_l5 = tape.val(fwd.gates[4]);
  RasterGrid out(prob.h, prob.w, RasterKind::label);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = prob.v[i] >= S(0.5) ? 1.f : 0.f;
  return out;
}

// Information-loss attack over a test set: each tile gets an independent
// random pair of distinct quadrants (image, trajectory) zero-filled before
// evaluation. Input tiles are never mutated.
template <typename S>
Metrics attack_eval(const DeepDualMapper<S>& model, std::span<const TileSample> tiles,
                    std::uint64_t seed, ConfusionCounts* counts_out = nullptr) {
  Rng rng(seed);
  ConfusionCounts counts;
  for (const TileSample& tile : tiles) {
    AttackSpec spec;
    spec.image_quadrant = 1 + static_cast<int>(rng.below(4));
    // Uniform over the three quadrants different from the image one.
    spec.traj_quadrant =
        1 + static_cast<int>((spec.image_quadrant - 1 + 1 + rng.below(3)) % 4);
    const TileSample attacked = apply_info_loss(tile, spec);
    counts.merge(confusion(predict_tile(model, attacked), tile.label));
  }
  if (counts_out) *counts_out = counts;
  return compute_metrics(counts);
}

// Clean (no attack) evaluation over tiles, for comparison against the
// attacked run.
template <typename S>
Metrics tile_eval(const DeepDualMapper<S>& model, std::span<const TileSample> tiles,
                  ConfusionCounts* counts_out = nullptr) {
  ConfusionCounts counts;
  for (const TileSample& tile : tiles)
    counts.merge(confusion(predict_tile(model, tile), tile.label));
  if (counts_out) *counts_out = counts;
  return compute_metrics(counts);
}

struct SweepSetting {
  int blur_factor = 1;
  double noise_sigma_m = 0.0;
};

struct SweepRow {
  SweepSetting setting;
  Metrics metrics;
  double mean_gate_image = 0;
  double mean_gate_traj = 0;
};

// Data-quality sweep: image resolution reduced per tile, trajectory noise
// applied at the point level and re-rasterized region-wide. Each setting
// reports metrics plus the mean level-5 gate values.
template <typename S>
std::vector<SweepRow> quality_sweep(const DeepDualMapper<S>& model, const GeoRegion& region,
                                    const RegionRasters& rasters,
                                    std::span<const TrajectoryPoint> points, int traj_cap,
                                    std::span<const std::pair<int, int>> tile_corners,
                                    int tile_size, std::span<const int> blur_factors,
                                    std::span<const double> noise_sigmas, std::uint64_t seed) {
  std::vector<SweepSetting> settings;
  for (int b : blur_factors) settings.push_back({b, 0.0});
  for (double s : noise_sigmas)
    if (!(s == 0.0 && !blur_factors.empty() && blur_factors[0] == 1))
      settings.push_back({1, s});

  std::vector<SweepRow> rows;
  Rng rng(seed);
  for (const SweepSetting& setting : settings) {
    RegionRasters current = rasters;
    if (setting.noise_sigma_m > 0) {
      Rng noise_rng = rng.derive(static_cast<std::uint64_t>(setting.noise_sigma_m * 1000));
      current.traj = scale_traj(
          rasterize_trajectories_noisy(points, region, setting.noise_sigma_m, noise_rng),
          traj_cap);
    }
    ConfusionCounts counts;
    double gate_image_sum = 0, gate_traj_sum = 0;
    std::uint64_t gate_pixels = 0;
    for (const auto& [row, col] : tile_corners) {
      TileSample tile = crop_tile(current, row, col, tile_size);
      tile = degrade(tile, setting.blur_factor);
      Tensor<S> gates;
      counts.merge(confusion(predict_tile(model, tile, &gates), tile.label));
      const std::size_t plane_sz = static_cast<std::size_t>(gates.h) * gates.w;
      for (std::size_t i = 0; i < plane_sz; ++i) {
        gate_image_sum += gates.plane(0, 0)[i];
        gate_traj_sum += gates.plane(0, 1)[i];
      }
      gate_pixels += plane_sz;
    }
    SweepRow r;
    r.setting = setting;
    r.metrics = compute_metrics(counts);
    r.mean_gate_image = gate_image_sum / static_cast<double>(gate_pixels);
    r.mean_gate_traj = gate_traj_sum / static_cast<double>(gate_pixels);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("sweep: cannot write " + path);
  out << "blur_factor,noise_sigma_m,iou,f1,mean_gate_image,mean_gate_traj\n";
  for (const auto& r : rows)
    out << r.setting.blur_factor << ',' << r.setting.noise_sigma_m << ',' << r.metrics.iou << ','
        << r.metrics.f1 << ',' << r.mean_gate_image << ',' << r.mean_gate_traj << '\n';
}

}  // namespace ddm
