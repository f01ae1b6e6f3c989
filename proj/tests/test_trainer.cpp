#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ddm/data/synth.hpp"
#include "ddm/model/checkpoint.hpp"
#include "ddm/train/trainer.hpp"

using ddm::Batch;
using ddm::LossWeights;
using ddm::ModelConfig;
using ddm::Rng;
using ddm::Tape;
using ddm::Tensor;
using ddm::TrainConfig;

namespace {

Batch<float> synth_batch(int n, int size, std::uint64_t seed) {
  ddm::SynthSpec spec;
  spec.n_roads = 2;
  const auto tiles = ddm::make_synth_tiles(n, size, spec, seed);
  return ddm::make_batch<float>(tiles);
}

void zero_all_predictors(ddm::DeepDualMapper<float>& model) {
  for (int level = 1; level <= 5; ++level) {
    model.registry().find("pred" + std::to_string(level) + ".fc.weight")->value.zero();
    model.registry().find("pred" + std::to_string(level) + ".fc.bias")->value.zero();
  }
}

}  // namespace

TEST(TotalLoss, TwentyEqualTermsGiveTwelvePointFiveTimesBase) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 41);
  zero_all_predictors(model);  // every stream predicts 0.5 -> every term is ln 2
  const auto batch = synth_batch(2, 32, 7);
  Tape<float> t;
  const auto fwd = model.forward(t, t.input(batch.image), t.input(batch.traj), true);
  const auto pyramid = ddm::build_label_pyramid(batch.label);

  const auto loss = ddm::supervision_loss(t, fwd, pyramid, LossWeights{});
  const double l0 = std::log(2.0);
  EXPECT_NEAR(t.val(loss.total).v[0], 12.5 * l0, 1e-6);
  EXPECT_NEAR(loss.image, 5 * l0, 1e-6);
  EXPECT_NEAR(loss.refined, 5 * l0, 1e-6);

  // Scaling every weight by k scales the total by k exactly.
  LossWeights tripled{1.5, 1.5, 1.5, 3.0};
  Tape<float> t2;
  const auto fwd2 = model.forward(t2, t2.input(batch.image), t2.input(batch.traj), true);
  const auto loss2 = ddm::supervision_loss(t2, fwd2, pyramid, tripled);
  EXPECT_NEAR(t2.val(loss2.total).v[0], 3 * 12.5 * l0, 1e-5);

  // Auxiliary weights at zero leave only the refined stream.
  LossWeights refined_only{0, 0, 0, 1.0};
  Tape<float> t3;
  const auto fwd3 = model.forward(t3, t3.input(batch.image), t3.input(batch.traj), true);
  const auto loss3 = ddm::supervision_loss(t3, fwd3, pyramid, refined_only);
  EXPECT_NEAR(t3.val(loss3.total).v[0], loss3.refined, 1e-6);

  EXPECT_THROW(ddm::supervision_loss(t3, fwd3, pyramid, LossWeights{-0.1, 0.5, 0.5, 1.0}),
               std::invalid_argument);
}

TEST(TotalLoss, EveryParameterReceivesGradient) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 43);
  const auto batch = synth_batch(2, 32, 13);
  model.registry().zero_grad();
  Tape<float> t;
  const auto fwd = model.forward(t, t.input(batch.image), t.input(batch.traj), true);
  const auto pyramid = ddm::build_label_pyramid(batch.label);
  const auto loss = ddm::supervision_loss(t, fwd, pyramid, LossWeights{});
  t.backward(loss.total);
  for (const auto& p : model.registry().params()) {
    double norm = 0;
    for (float g : p->grad.v) norm += static_cast<double>(g) * g;
    EXPECT_GT(norm, 0.0) << "dead parameter: " << p->name;
  }
}

TEST(Trainer, LossDecreasesOverFirstTenStepsOnFixedBatch) {
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 45);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  ddm::Trainer<float> trainer(model, cfg, LossWeights{});
  const auto batch = synth_batch(2, 32, 21);
  double prev = 1e30;
  for (int s = 0; s < 10; ++s) {
    const auto stats = trainer.train_step(batch);
    EXPECT_LT(stats.total, prev) << "step " << s;
    prev = stats.total;
  }
}

TEST(Trainer, DeterministicStepsAndByteIdenticalCheckpoints) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ddm_det_test";
  fs::create_directories(dir);
  const auto batch = synth_batch(2, 32, 33);

  auto run = [&](const std::string& sub) {
    fs::create_directories(dir / sub);
    ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 99);
    TrainConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.batch_size = 2;
    ddm::Trainer<float> trainer(model, cfg, LossWeights{});
    std::vector<double> losses;
    for (int s = 0; s < 5; ++s) losses.push_back(trainer.train_step(batch).total);
    ddm::CheckpointMeta meta;
    meta.step = trainer.optimizer().step_count();
    ddm::save_checkpoint((dir / sub / "ckpt").string(), model.registry(), meta);
    return losses;
  };
  const auto la = run("a");
  const auto lb = run("b");
  EXPECT_EQ(la, lb);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(dir / "a" / "ckpt.bin"), slurp(dir / "b" / "ckpt.bin"));
  EXPECT_EQ(slurp(dir / "a" / "ckpt.json"), slurp(dir / "b" / "ckpt.json"));
}

TEST(Trainer, CheckpointRoundTripAndResume) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ddm_resume_test";
  fs::create_directories(dir);
  const auto batch1 = synth_batch(2, 32, 51);
  const auto batch2 = synth_batch(2, 32, 52);

  ddm::DeepDualMapper<float> model_a(ModelConfig{2, 3, 1}, 7);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 2;
  ddm::Trainer<float> trainer_a(model_a, cfg, LossWeights{});
  for (int s = 0; s < 3; ++s) trainer_a.train_step(batch1);

  ddm::CheckpointMeta meta;
  meta.step = trainer_a.optimizer().step_count();
  meta.epoch = 1;
  save_checkpoint((dir / "ckpt").string(), model_a.registry(), meta,
                  trainer_a.optimizer().state_tensors());

  // Restored model reproduces eval outputs bit for bit.
  ddm::DeepDualMapper<float> model_b(ModelConfig{2, 3, 1}, 1234);  // different init
  ddm::Trainer<float> trainer_b(model_b, cfg, LossWeights{});
  bool extras = false;
  const auto loaded = ddm::load_checkpoint((dir / "ckpt").string(), model_b.registry(),
                                           trainer_b.optimizer().mutable_state_tensors(),
                                           &extras);
  EXPECT_TRUE(extras);
  EXPECT_EQ(loaded.step, 3);
  trainer_b.optimizer().set_step_count(loaded.step);

  Tape<float> ta(false), tb(false);
  const auto fa = model_a.forward(ta, ta.input(batch2.image), ta.input(batch2.traj), false);
  const auto fb = model_b.forward(tb, tb.input(batch2.image), tb.input(batch2.traj), false);
  EXPECT_EQ(ta.val(fa.output).v, tb.val(fb.output).v);

  // Resumed training continues the step counter and the exact trajectory.
  const auto sa = trainer_a.train_step(batch2);
  const auto sb = trainer_b.train_step(batch2);
  EXPECT_EQ(sa.step, 4);
  EXPECT_EQ(sb.step, 4);
  EXPECT_EQ(sa.total, sb.total);
}

TEST(Trainer, NonFiniteLossAbortsWithDiagnostics) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "ddm_diverge_test";
  fs::remove_all(dir);
  ddm::DeepDualMapper<float> model(ModelConfig{2, 3, 1}, 61);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 1;
  cfg.diagnostic_dir = dir.string();
  ddm::Trainer<float> trainer(model, cfg, LossWeights{});
  auto batch = synth_batch(1, 32, 71);
  batch.label.v[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(trainer.train_step(batch), std::runtime_error);
  EXPECT_TRUE(fs::exists(dir / "divergence.json"));
  EXPECT_TRUE(fs::exists(dir / "image_n0_c0.ftz"));
}
