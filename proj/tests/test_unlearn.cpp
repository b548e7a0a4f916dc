#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "novo/errors.hpp"
#include "novo/eval.hpp"
#include "novo/trainer.hpp"
#include "novo/unlearn.hpp"

using namespace novo;

namespace {

std::vector<float> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// A small keyed model trained once and shared by the behavioural tests.
class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SyntheticSpec s;
    s.class_count = 4;
    s.per_class = 60;
    s.height = s.width = 8;
    s.noise = 0.05;
    s.seed = 3;
    const auto split = split_dataset(synth_generate(s).data, 0.25, 3);
    TrainConfig c;
    c.model.image_height = c.model.image_width = 8;
    c.model.patch = 4;
    c.model.dim = 16;
    c.model.heads = 2;
    c.model.layers = 2;
    c.model.mlp_ratio = 2;
    c.model.num_classes = 4;
    c.epochs = 60;
    c.batch_size = 16;
    c.learning_rate = 3e-3;
    c.seed = 3;
    ckpt_ = new Checkpoint(train(c, split.train).checkpoint);
    test_ = new LabeledDataset(split.test);
  }
  static void TearDownTestSuite() {
    delete ckpt_;
    delete test_;
  }

  static Checkpoint* ckpt_;
  static LabeledDataset* test_;
};

Checkpoint* TrainedModel::ckpt_ = nullptr;
LabeledDataset* TrainedModel::test_ = nullptr;

std::vector<std::size_t> all_indices(const LabeledDataset& d) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace

TEST(KeyState, WithdrawAndRestore) {
  const auto all = KeyState::all_active(5);
  EXPECT_EQ(all.A().str(), "11111");
  EXPECT_EQ(all.U().str(), "00000");
  const auto w = withdraw(all, {1, 3});
  EXPECT_EQ(w.A().str(), "10101");
  EXPECT_EQ(w.U().str(), "01010");
  EXPECT_EQ(w.withdrawn(), (ClassSet{1, 3}));
  EXPECT_EQ(all.active().size(), 5u);  // the input is untouched
  EXPECT_EQ(withdraw(w, {1, 3}), w);
  EXPECT_EQ(withdraw(withdraw(all, {1}), {3}), w);
  EXPECT_EQ(restore(w, {1, 3}), all);
  EXPECT_EQ(restore(w, {0}), w);
  EXPECT_THROW(withdraw(all, {5}), IndexError);
  EXPECT_THROW(restore(all, {7}), IndexError);
  EXPECT_FALSE(w.degenerate());
  EXPECT_TRUE(withdraw(all, {0, 1, 2, 3, 4}).degenerate());
}

TEST(KeyState, ParsesClassLists) {
  EXPECT_EQ(parse_class_list("3,7"), (ClassSet{3, 7}));
  EXPECT_EQ(parse_class_list(" 2 , 2,0 "), (ClassSet{0, 2}));
  EXPECT_TRUE(parse_class_list("").empty());
  EXPECT_THROW(parse_class_list("1,x"), ConfigError);
  EXPECT_THROW(parse_class_list("-1"), ConfigError);
}

TEST_F(TrainedModel, LearnsWithAllKeys) {
  const auto r = evaluate(ckpt_->model, KeyState::all_active(4), *test_);
  ASSERT_TRUE(r.acc_retain);
  EXPECT_GE(*r.acc_retain, 95.0);
  EXPECT_FALSE(r.acc_forget);
}

TEST_F(TrainedModel, SequentialWithdrawalEqualsJoint) {
  const auto idx = all_indices(*test_);
  const auto images = test_->batch(idx);
  const auto all = KeyState::all_active(4);
  EXPECT_EQ(vals(keyed_logits(ckpt_->model, images, withdraw(withdraw(all, {0}), {2}))),
            vals(keyed_logits(ckpt_->model, images, withdraw(all, {0, 2}))));
}

TEST_F(TrainedModel, EverySubsetIsControllable) {
  const auto all = KeyState::all_active(4);
  for (std::size_t mask = 1; mask < 15; ++mask) {
    ClassSet w;
    for (std::size_t c = 0; c < 4; ++c) {
      if (mask & (1u << c)) w.insert(c);
    }
    const auto r = evaluate(ckpt_->model, withdraw(all, w), *test_);
    EXPECT_LE(*r.acc_forget, 5.0) << format_report(r);
    EXPECT_GE(*r.acc_retain, 90.0) << format_report(r);
  }
}

TEST_F(TrainedModel, PredictionsLandInTheActiveSet) {
  const auto all = KeyState::all_active(4);
  for (const ClassSet& w : {ClassSet{1}, ClassSet{0, 3}, ClassSet{0, 1, 2}}) {
    const auto r = evaluate(ckpt_->model, withdraw(all, w), *test_);
    std::size_t inside = 0, total = 0;
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t p = 0; p < 4; ++p) {
        total += r.confusion[t][p];
        if (!w.count(p)) inside += r.confusion[t][p];
      }
    }
    EXPECT_GE(100.0 * static_cast<double>(inside) / static_cast<double>(total), 95.0);
  }
}

TEST_F(TrainedModel, WithdrawnLogitsVaryLessThanActiveLogits) {
  const auto logits = dataset_logits(ckpt_->model, *test_, withdraw(KeyState::all_active(4), {1, 2}));
  auto column_std = [&](std::size_t k) {
    double m = 0, v = 0;
    const std::size_t n = logits.dim(0);
    for (std::size_t i = 0; i < n; ++i) m += logits[i * 4 + k];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += (logits[i * 4 + k] - m) * (logits[i * 4 + k] - m);
    return std::sqrt(v / static_cast<double>(n));
  };
  EXPECT_LT(std::max(column_std(1), column_std(2)), std::min(column_std(0), column_std(3)));
}

TEST_F(TrainedModel, WithdrawalNeverTouchesParameters) {
  const auto before = parameter_checksum(ckpt_->model);
  const auto t0 = std::chrono::steady_clock::now();
  const auto state = withdraw(KeyState::all_active(4), {0, 1});
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  evaluate(ckpt_->model, state, *test_);
  EXPECT_EQ(parameter_checksum(ckpt_->model), before);
  EXPECT_LT(elapsed, std::chrono::seconds(1));
}

TEST_F(TrainedModel, PredictMatchesBatchedLogits) {
  const auto state = withdraw(KeyState::all_active(4), {2});
  const std::vector<std::size_t> idx{5};
  const auto batched = keyed_logits(ckpt_->model, test_->batch(idx), state);
  const auto p = predict(test_->image(5), {8, 8, 3}, state, *ckpt_);
  EXPECT_EQ(p.logits, vals(batched));
  EXPECT_EQ(predict(test_->image(5), {1, 8, 8, 3}, state, *ckpt_).logits, p.logits);
  EXPECT_NE(p.label, 2u);
  EXPECT_FALSE(p.degenerate);
  EXPECT_THROW(predict(test_->image(5), {8, 8, 4}, state, *ckpt_), DimensionError);
  EXPECT_THROW(keyed_logits(ckpt_->model, test_->batch(idx), KeyState::all_active(5)), DimensionError);
  EXPECT_TRUE(predict(test_->image(5), {8, 8, 3}, withdraw(state, {0, 1, 3}), *ckpt_).degenerate);
}

TEST_F(TrainedModel, SealedCheckpointBehavesLikeRuntimeWithdrawal) {
  const auto state = withdraw(KeyState::all_active(4), {1, 3});
  const auto sealed = decode_checkpoint(encode_checkpoint(seal(*ckpt_, state)));
  EXPECT_TRUE(sealed.sealed);
  EXPECT_EQ(sealed.withdrawn, (ClassSet{1, 3}));
  EXPECT_TRUE(sealed.optimizer.slots.empty());
  EXPECT_EQ(KeyState::for_checkpoint(sealed), state);

  const auto images = test_->batch(all_indices(*test_));
  const auto runtime = vals(keyed_logits(ckpt_->model, images, state));
  EXPECT_EQ(vals(keyed_logits(sealed.model, images, state)), runtime);
  // Turning the keys back on cannot undo a sealed withdrawal.
  EXPECT_EQ(vals(keyed_logits(sealed.model, images, KeyState::all_active(4))), runtime);
  EXPECT_NE(parameter_checksum(sealed.model), parameter_checksum(ckpt_->model));
}

TEST(Seal, RefusesPlainCheckpoints) {
  TrainConfig c;
  c.model.image_height = c.model.image_width = 8;
  c.model.dim = 16;
  c.model.layers = 1;
  c.model.prompts = false;
  Rng rng(0);
  const Checkpoint plain{c, NovoModel(c.model, rng), {}, 0, {}, false, {}};
  EXPECT_THROW(seal(plain, withdraw(KeyState::all_active(8), {0})), ContractError);
}
