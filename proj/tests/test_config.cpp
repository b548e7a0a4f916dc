#include <gtest/gtest.h>

#include <fstream>

#include "novo/config.hpp"
#include "novo/errors.hpp"
#include "test_util.hpp"

using namespace novo;

TEST(Config, DefaultsAreValid) {
  const TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.drop_expand, DropExpandMode::kDropAndExpand);
  EXPECT_TRUE(c.model.prompts);
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const auto c = parse_config(
      "# training run\n"
      "epochs = 7\n"
      "\n"
      "  learning_rate=0.001   # faster\n"
      "gamma = 0\n"
      "drop_expand = drop_only\n"
      "mode = plain\n"
      "optimizer = sgd");
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(c.weights.gamma, 0.0);
  EXPECT_EQ(c.drop_expand, DropExpandMode::kDropOnly);
  EXPECT_FALSE(c.model.prompts);
  EXPECT_EQ(c.optimizer, OptimizerKind::kSgd);
  EXPECT_EQ(c.batch_size, TrainConfig{}.batch_size);
}

TEST(Config, LayersOnTopOfBase) {
  TrainConfig base;
  base.seed = 99;
  EXPECT_EQ(parse_config("epochs = 2", base).seed, 99u);
}

TEST(Config, ErrorsNameLineAndKey) {
  auto expect_msg = [](const char* text, const char* fragment) {
    try {
      parse_config(text);
      ADD_FAILURE() << "no error for " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_msg("epochs = 3\nwidth = 4", "line 2");
  expect_msg("epochs = 3\nwidth = 4", "width");
  expect_msg("epochs = three", "epochs");
  expect_msg("epochs = -1", "epochs");
  expect_msg("learning_rate = 1e-3x", "learning_rate");
  expect_msg("mode = fancy", "mode");
  expect_msg("just a line", "key = value");
  expect_msg("drop_expand = both", "drop");
}

TEST(Config, FormatRoundTrips) {
  TrainConfig c;
  c.epochs = 11;
  c.learning_rate = 0.000123456789;
  c.weights = {0.5, 2.0, 0.25};
  c.drop_expand = DropExpandMode::kNone;
  c.model.dim = 32;
  c.model.prompts = false;
  c.seed = 12345678901ULL;
  EXPECT_EQ(parse_config(format_config(c)), c);
}

TEST(Config, ValidateRejectsBadValues) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.weights.tau = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.test_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.model.patch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LoadsFromFile) {
  novo::testing::ScratchDir dir;
  std::ofstream(dir / "run.cfg") << "epochs = 5\nseed = 3\n";
  const auto c = load_config(dir / "run.cfg");
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_THROW(load_config(dir / "missing.cfg"), IoError);
}
