#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "ddm/data/synth.hpp"
#include "ddm/eval/gates.hpp"
#include "ddm/eval/harness.hpp"
#include "ddm/eval/metrics.hpp"
#include "ddm/eval/stitch.hpp"

using ddm::ConfusionCounts;
using ddm::ModelConfig;
using ddm::RasterGrid;
using ddm::RasterKind;
using ddm::Rect;
using ddm::Rng;

namespace {

RasterGrid random_binary(Rng& rng, int h, int w, double p) {
  RasterGrid g(h, w, RasterKind::label);
  for (auto& e : g.v) e = rng.uniform() < p ? 1.f : 0.f;
  return g;
}

// Saturates the level-5 predictor so the model emits a constant class.
void force_background_output(ddm::DeepDualMapper<float>& model) {
  model.registry().find("pred5.fc.weight")->value.zero();
  auto* bias = model.registry().find("pred5.fc.bias");
  bias->value.v[0] = 40.f;   // background logit
  bias->value.v[1] = -40.f;  // road logit
}

}  // namespace

TEST(Confusion, TrivialAndBruteForce) {
  Rng rng(3);
  const auto gt = random_binary(rng, 16, 16, 0.4);
  const auto same = ddm::confusion(gt, gt);
  EXPECT_EQ(same.fp, 0u);
  EXPECT_EQ(same.fn, 0u);
  EXPECT_EQ(same.total(), 256u);

  RasterGrid inverted = gt;
  for (auto& e : inverted.v) e = 1.f - e;
  const auto inv = ddm::confusion(inverted, gt);
  EXPECT_EQ(inv.tp, 0u);
  EXPECT_EQ(inv.tn, 0u);

  for (int trial = 0; trial < 100; ++trial) {
    const auto pred = random_binary(rng, 16, 16, 0.5);
    const auto gt2 = random_binary(rng, 16, 16, 0.3);
    const auto c = ddm::confusion(pred, gt2);
    ConfusionCounts oracle;
    for (int r = 0; r < 16; ++r)
      for (int col = 0; col < 16; ++col) {
        const bool p = pred.at(r, col) > 0.5f, g = gt2.at(r, col) > 0.5f;
        if (p && g) ++oracle.tp;
        if (p && !g) ++oracle.fp;
        if (!p && g) ++oracle.fn;
        if (!p && !g) ++oracle.tn;
      }
    EXPECT_EQ(c.tp, oracle.tp);
    EXPECT_EQ(c.fp, oracle.fp);
    EXPECT_EQ(c.fn, oracle.fn);
    EXPECT_EQ(c.tn, oracle.tn);
  }
}

TEST(Metrics, ArithmeticDegenerateAndIouLeF1) {
  const auto m = ddm::compute_metrics({3, 1, 1, 10});
  EXPECT_DOUBLE_EQ(m.iou, 0.6);
  EXPECT_DOUBLE_EQ(m.f1, 0.75);
  EXPECT_TRUE(m.flags.empty());

  const auto degenerate = ddm::compute_metrics({0, 0, 0, 100});
  EXPECT_EQ(degenerate.iou, 0.0);
  EXPECT_EQ(degenerate.f1, 0.0);
  EXPECT_FALSE(degenerate.flags.empty());

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionCounts c{rng.below(1000), rng.below(1000), rng.below(1000), rng.below(1000)};
    const auto mm = ddm::compute_metrics(c);
    EXPECT_LE(mm.iou, mm.f1 + 1e-12);
  }

  const auto report = ddm::metrics_report({3, 1, 1, 10}, m);
  EXPECT_DOUBLE_EQ(report.at("iou").get<double>(), 0.6);
  EXPECT_EQ(report.at("tp").get<std::uint64_t>(), 3u);
}

TEST(Stitch, ConstantBackgroundModelGivesEmptyMap) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 71);
  force_background_output(model);
  const auto synth = ddm::make_synth_region(96, 96, ddm::SynthSpec{}, 5);
  const auto map = ddm::stitch_predict(model, synth.rasters, Rect{16, 16, 64, 64}, 32);
  EXPECT_EQ(map.height, 64);
  EXPECT_EQ(map.width, 64);
  EXPECT_EQ(map.sum(), 0.0);
  EXPECT_THROW(ddm::stitch_predict(model, synth.rasters, Rect{0, 0, 50, 64}, 32),
               std::invalid_argument);
}

TEST(Stitch, MatchesGloballyPaddedOracleIncludingBorders) {
  const int tile = 32, margin = tile / 2;
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 73);
  const auto synth = ddm::make_synth_region(64, 64, ddm::SynthSpec{}, 9);
  const Rect rect{0, 0, 64, 64};  // border cells on every side
  const auto stitched = ddm::stitch_predict(model, synth.rasters, rect, tile);

  // Oracle: pad every raster once globally, then run the window forward with
  // no implicit padding needed.
  ddm::RegionRasters padded;
  auto pad = [&](const RasterGrid& src, RasterKind kind) {
    RasterGrid out(64 + 2 * margin, 64 + 2 * margin, kind);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) out.at(r + margin, c + margin) = src.at(r, c);
    return out;
  };
  for (int ch = 0; ch < 3; ++ch)
    padded.image[ch] = pad(synth.rasters.image[ch], RasterKind::image_channel);
  padded.traj = pad(synth.rasters.traj, RasterKind::traj_scaled);
  padded.label = pad(synth.rasters.label, RasterKind::label);

  RasterGrid oracle(64, 64, RasterKind::label);
  // Visit cells in reverse order: the result must not depend on order.
  for (int cy = 1; cy >= 0; --cy)
    for (int cx = 1; cx >= 0; --cx) {
      const auto prob = ddm::predict_window(model, padded, cy * tile, cx * tile, 2 * tile);
      for (int y = 0; y < tile; ++y)
        for (int x = 0; x < tile; ++x)
          oracle.at(cy * tile + y, cx * tile + x) =
              prob.at(0, 0, margin + y, margin + x) >= 0.5f ? 1.f : 0.f;
    }
  EXPECT_EQ(stitched.v, oracle.v);
}

TEST(Gates, ExportedPngsAreComplementaryAndSized) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ddm_gates_test";
  fs::remove_all(dir);
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 75);
  const auto tiles = ddm::make_synth_tiles(1, 64, ddm::SynthSpec{}, 11);
  const auto paths = ddm::export_gates(model, tiles[0], dir.string());
  ASSERT_EQ(paths.size(), 10u);

  for (int level = 1; level <= 5; ++level) {
    const auto img = ddm::read_png_rgb8(
        (dir / ("gate_image_level" + std::to_string(level) + ".png")).string());
    const auto trj = ddm::read_png_rgb8(
        (dir / ("gate_traj_level" + std::to_string(level) + ".png")).string());
    const int expect = 64 >> (5 - level);
    EXPECT_EQ(img.height, expect);
    EXPECT_EQ(img.width, expect);
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        const int sum = img.at(r, c, 0) + trj.at(r, c, 0);
        EXPECT_NEAR(sum, 255, 1);  // per-pixel complementarity up to rounding
      }
  }
}

TEST(Gates, ZeroSelectorGivesMidGray) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ddm_gates_gray";
  fs::remove_all(dir);
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 77);
  for (int level = 1; level <= 5; ++level) {
    model.registry().find("gfm" + std::to_string(level) + ".logits.weight")->value.zero();
    model.registry().find("gfm" + std::to_string(level) + ".logits.bias")->value.zero();
  }
  const auto tiles = ddm::make_synth_tiles(1, 32, ddm::SynthSpec{}, 13);
  ddm::export_gates(model, tiles[0], dir.string());
  const auto img = ddm::read_png_rgb8((dir / "gate_image_level5.png").string());
  for (std::size_t i = 0; i < img.v.size(); ++i) EXPECT_EQ(img.v[i], 128);
}

TEST(AttackEval, BackgroundModelUnchangedAndInputsUntouched) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 79);
  force_background_output(model);
  auto tiles = ddm::make_synth_tiles(3, 32, ddm::SynthSpec{}, 17);
  const auto tiles_copy = tiles;

  ddm::ConfusionCounts attacked_counts, clean_counts;
  const auto attacked = ddm::attack_eval(model, tiles, 123, &attacked_counts);
  const auto clean = ddm::tile_eval(model, tiles, &clean_counts);
  // A constant-background model is blind to the attack; the label never
  // changes, so the tallies agree exactly.
  EXPECT_EQ(attacked_counts.tp, clean_counts.tp);
  EXPECT_EQ(attacked_counts.fn, clean_counts.fn);
  EXPECT_EQ(attacked.iou, clean.iou);

  // The stored tiles are never mutated.
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(tiles[i].image[ch].v, tiles_copy[i].image[ch].v);
    EXPECT_EQ(tiles[i].traj.v, tiles_copy[i].traj.v);
  }
}

TEST(AttackEval, DeterministicUnderSeedAndDistinctQuadrants) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 81);
  const auto tiles = ddm::make_synth_tiles(4, 32, ddm::SynthSpec{}, 19);
  ddm::ConfusionCounts c1, c2;
  ddm::attack_eval(model, tiles, 777, &c1);
  ddm::attack_eval(model, tiles, 777, &c2);
  EXPECT_EQ(c1.tp, c2.tp);
  EXPECT_EQ(c1.fp, c2.fp);
}

TEST(QualitySweep, IdentityRowReproducesCleanMetrics) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 83);
  const auto synth = ddm::make_synth_region(64, 64, ddm::SynthSpec{}, 23);
  const std::vector<std::pair<int, int>> corners = {{0, 0}, {32, 32}};
  const std::vector<int> blurs = {1, 2};
  const std::vector<double> sigmas = {0.0, 8.0};

  const auto rows = ddm::quality_sweep(model, synth.region, synth.rasters, synth.points, 64,
                                       corners, 32, blurs, sigmas, 31);
  ASSERT_EQ(rows.size(), 3u);  // (1,0), (2,0), (1,8); duplicate identity dropped
  EXPECT_EQ(rows[0].setting.blur_factor, 1);
  EXPECT_EQ(rows[0].setting.noise_sigma_m, 0.0);

  std::vector<ddm::TileSample> tiles;
  for (const auto& [r, c] : corners) tiles.push_back(ddm::crop_tile(synth.rasters, r, c, 32));
  const auto clean = ddm::tile_eval(model, tiles);
  EXPECT_EQ(rows[0].metrics.iou, clean.iou);
  EXPECT_EQ(rows[0].metrics.f1, clean.f1);

  // Gate means are genuine probabilities and complementary.
  for (const auto& row : rows)
    EXPECT_NEAR(row.mean_gate_image + row.mean_gate_traj, 1.0, 1e-5);

  namespace fs = std::filesystem;
  const auto csv = fs::temp_directory_path() / "ddm_sweep.csv";
  ddm::write_sweep_csv(csv.string(), rows);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "blur_factor,noise_sigma_m,iou,f1,mean_gate_image,mean_gate_traj");
}
