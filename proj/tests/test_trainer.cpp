#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "novo/dataset.hpp"
#include "novo/errors.hpp"
#include "novo/trainer.hpp"
#include "test_util.hpp"

using namespace novo;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.image_height = c.model.image_width = 8;
  c.model.channels = 3;
  c.model.patch = 4;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.layers = 1;
  c.model.mlp_ratio = 2;
  c.model.num_classes = 4;
  c.epochs = 4;
  c.batch_size = 16;
  c.learning_rate = 3e-3;
  c.seed = 1;
  return c;
}

LabeledDataset tiny_data() {
  SyntheticSpec s;
  s.class_count = 4;
  s.per_class = 16;
  s.height = s.width = 8;
  s.noise = 0.05;
  return synth_generate(s).data;
}

}  // namespace

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 100), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 50, 100), 0.05, 1e-15);
  EXPECT_NEAR(cosine_lr(0.1, 100, 100), 0.0, 1e-15);
  EXPECT_NEAR(cosine_lr(0.1, 200, 100), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 5, 0), 0.1);
}

TEST(Optimizer, AdamMinimizesAQuadratic) {
  TrainConfig cfg;
  cfg.clip_norm = 0;
  Tensor w({2}, {3.0f, -2.0f}, true);
  Optimizer opt(cfg, {{"w", w}});
  for (int i = 0; i < 2000; ++i) {
    Tape tape;
    TapeScope<float> scope(tape);
    tape.backward(sum(mul(w, w)));
    opt.step(0.01);
  }
  EXPECT_NEAR(w[0], 0.0f, 1e-2);
  EXPECT_NEAR(w[1], 0.0f, 1e-2);
  EXPECT_EQ(opt.step_count(), 2000u);
}

TEST(Optimizer, FirstAdamStepMovesEachWeightByLr) {
  TrainConfig cfg;
  Tensor w({2}, {1.0f, 1.0f}, true);
  Optimizer opt(cfg, {{"w", w}});
  {
    Tape tape;
    TapeScope<float> scope(tape);
    tape.backward(sum(mul(w, Tensor({2}, {0.001f, -5.0f}))));
  }
  const double norm = opt.step(0.1);
  EXPECT_NEAR(norm, std::hypot(0.001, 5.0), 1e-5);
  EXPECT_NEAR(w[0], 0.9f, 1e-4);
  EXPECT_NEAR(w[1], 1.1f, 1e-4);
}

TEST(Optimizer, ClipsGlobalNormForSgd) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.clip_norm = 1.0;
  Tensor w({2}, {0.0f, 0.0f}, true);
  Optimizer opt(cfg, {{"w", w}});
  {
    Tape tape;
    TapeScope<float> scope(tape);
    tape.backward(sum(mul(w, Tensor({2}, {3.0f, 4.0f}))));
  }
  EXPECT_NEAR(opt.step(1.0), 5.0, 1e-6);
  EXPECT_NEAR(w[0], -0.6f, 1e-6);
  EXPECT_NEAR(w[1], -0.8f, 1e-6);
}

TEST(Optimizer, RefusesFrozenHoldVector) {
  EXPECT_THROW(Optimizer(TrainConfig{}, {{"keys.u_h", Tensor::zeros({4})}}), ContractError);
}

TEST(Trainer, LearnsTheTinyProblemAndKeepsHoldVectorZero) {
  auto cfg = tiny_config();
  cfg.epochs = 40;
  const auto result = train(cfg, tiny_data());
  ASSERT_EQ(result.log.size(), 40u);
  double early = 0, late = 0;
  for (std::size_t e = 0; e < 5; ++e) {
    early += result.log[e].l_ce;
    late += result.log[35 + e].l_ce;
  }
  EXPECT_LT(late, 0.7 * early);
  for (float v : result.checkpoint.model.keys().u_h.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(result.checkpoint.epoch, 40u);
  for (const auto& m : result.log) {
    EXPECT_TRUE(std::isfinite(m.total));
    EXPECT_GE(m.l_u, 0.0);
    EXPECT_GE(m.l_i, 0.0);
  }
}

TEST(Trainer, SameSeedGivesBitIdenticalCheckpoints) {
  const auto data = tiny_data();
  const auto a = train(tiny_config(), data);
  const auto b = train(tiny_config(), data);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  EXPECT_EQ(a.log, b.log);
  auto other = tiny_config();
  other.seed = 2;
  EXPECT_NE(parameter_checksum(train(other, data).checkpoint.model), parameter_checksum(a.checkpoint.model));
}

TEST(Trainer, ResumeReproducesTheUninterruptedRun) {
  const auto data = tiny_data();
  const auto full = train(tiny_config(), data);
  TrainOptions stop;
  stop.stop_after_epoch = 2;
  const auto half = train(tiny_config(), data, stop);
  ASSERT_EQ(half.checkpoint.epoch, 2u);
  const auto restored = decode_checkpoint(encode_checkpoint(half.checkpoint));
  const auto rest = resume(restored, data);
  ASSERT_EQ(rest.log.size(), 2u);
  EXPECT_EQ(rest.log[0], full.log[2]);
  EXPECT_EQ(rest.log[1], full.log[3]);
  EXPECT_EQ(parameter_checksum(rest.checkpoint.model), parameter_checksum(full.checkpoint.model));
}

TEST(Trainer, EpochCallbackSeesEveryEpoch) {
  std::vector<std::size_t> seen;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochMetrics& m, const NovoModel&) { seen.push_back(m.epoch); };
  train(tiny_config(), tiny_data(), opts);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(Trainer, PlainModeTrainsWithoutKeys) {
  auto cfg = tiny_config();
  cfg.model.prompts = false;
  const auto result = train(cfg, tiny_data());
  EXPECT_EQ(result.log.back().l_u, 0.0);
  EXPECT_EQ(result.log.back().l_i, 0.0);
  EXPECT_EQ(result.checkpoint.model.prompt_parameter_count(), 0u);
}

TEST(Trainer, DivergenceIsANumericErrorWithSnapshot) {
  novo::testing::ScratchDir dir;
  auto cfg = tiny_config();
  cfg.learning_rate = 1e30;
  cfg.clip_norm = 0;
  TrainOptions opts;
  opts.nan_snapshot = dir / "nan.bin";
  EXPECT_THROW(train(cfg, tiny_data(), opts), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir / "nan.bin"));
}

TEST(Trainer, RejectsMismatchedDataAndSealedResume) {
  auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.model.num_classes = 5;
  EXPECT_THROW(train(cfg, data), ConfigError);
  cfg = tiny_config();
  cfg.model.image_height = cfg.model.image_width = 16;
  EXPECT_THROW(train(cfg, data), ConfigError);

  TrainOptions stop;
  stop.stop_after_epoch = 1;
  auto ckpt = train(tiny_config(), data, stop).checkpoint;
  ckpt.sealed = true;
  EXPECT_THROW(resume(ckpt, data), ContractError);
}

TEST(Trainer, MetricsCsvHasHeaderAndRows) {
  novo::testing::ScratchDir dir;
  write_metrics_csv({EpochMetrics{1, 0.5, 0.25, 0.125, 1.0, 50.0}}, dir / "m.csv");
  std::ifstream in(dir / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,l_ce,l_u,l_i,total,acc_retain_train");
  EXPECT_EQ(row, "1,0.5,0.25,0.125,1,50");
}
