#include <gtest/gtest.h>

#include <fstream>

#include "common.hpp"
#include "pcqa/trainer.hpp"

using namespace pcqa;
using ad::Tape;
using ad::Tensor;

namespace {

std::vector<LabeledCloud> tiny_dataset(const PreprocessConfig& pre) {
  std::vector<LabeledCloud> data;
  const synthetic::Shape shapes[] = {synthetic::Shape::sphere, synthetic::Shape::torus, synthetic::Shape::box};
  for (int i = 0; i < 3; ++i) {
    const auto pc = synthetic::make_shape(shapes[i], 200, 40 + i);
    data.push_back({preprocess(pc, pre), 0.2 * (i + 1), pc.name});
  }
  return data;
}

}  // namespace

TEST(Trainer, LossIsSquaredErrorOfPartitionMean) {
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<double>{1.0, 2.0, 6.0}, 2.0), 1.0);
  Tape t;
  const Tensor s0 = Tensor::parameter({1}, {1.0}), s1 = Tensor::parameter({1}, {5.0});
  const Tensor loss = mse_loss(t, {s0, s1}, 1.0);
  EXPECT_DOUBLE_EQ(loss.item(), 4.0);
  t.backward(loss);
  EXPECT_DOUBLE_EQ(s0.grad()[0], 2.0);  // d/ds_i = 2 (mean - mos) / n
  EXPECT_THROW(mse_loss(std::vector<double>{}, 1.0), TrainError);
}

TEST(Trainer, AdamFirstStepIsLearningRate) {
  Tensor w = Tensor::parameter({1}, {0.0});
  std::vector<Tensor> ps{w};
  w.mutable_grad()[0] = 1.0;
  AdamState st;
  st.learning_rate = 1e-3;
  adam_step(ps, st);
  EXPECT_NEAR(w[0], -1e-3, 1e-10);
  EXPECT_EQ(w.grad()[0], 0.0);
  EXPECT_EQ(st.t, 1u);
}

TEST(Trainer, AdamMinimizesQuadratic) {
  Tensor w = Tensor::parameter({1}, {0.0});
  std::vector<Tensor> ps{w};
  AdamState st;
  st.learning_rate = 0.1;
  for (int i = 0; i < 100; ++i) {
    Tape t;
    const Tensor d = ad::sub(t, w, Tensor::constant({1}, {3.0}));
    const Tensor loss = ad::sum_over_axis(t, ad::square(t, d), 0);
    t.backward(loss);
    adam_step(ps, st);
  }
  EXPECT_LT(std::abs(w[0] - 3.0), 0.1);
}

TEST(Trainer, ClipScalesToMaxNorm) {
  Tensor a = Tensor::parameter({2}, {0, 0}), b = Tensor::parameter({1}, {0});
  std::vector<Tensor> ps{a, b};
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.8);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 1.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.8);
}

TEST(Trainer, OneEpochOneCloudTakesOneStep) {
  PreprocessConfig pre{2, 16, 0};
  auto data = tiny_dataset(pre);
  data.resize(1);
  TrainConfig t;
  t.epochs = 1;
  const TrainResult r = train_on_clouds(data, t, testutil::tiny_model(), pre);
  EXPECT_EQ(r.steps, 1u);
  ASSERT_EQ(r.loss_history.size(), 1u);
  EXPECT_EQ(r.best_epoch, 1);
}

TEST(Trainer, SeededRunsAreIdenticalAndLossDrops) {
  PreprocessConfig pre{2, 16, 0};
  const auto data = tiny_dataset(pre);
  TrainConfig t;
  t.epochs = 30;
  t.learning_rate = 3e-3;
  t.seed = 5;
  const TrainResult a = train_on_clouds(data, t, testutil::tiny_model(), pre);
  const TrainResult b = train_on_clouds(data, t, testutil::tiny_model(), pre);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.steps, 90u);
  EXPECT_LT(*std::min_element(a.loss_history.begin(), a.loss_history.end()), a.loss_history.front());
  EXPECT_DOUBLE_EQ(a.loss_history[a.best_epoch - 1],
                   *std::min_element(a.loss_history.begin(), a.loss_history.end()));

  t.seed = 6;
  const TrainResult c = train_on_clouds(data, t, testutil::tiny_model(), pre);
  EXPECT_NE(a.loss_history, c.loss_history);
}

TEST(Trainer, BiasStartsAtMeanScore) {
  PreprocessConfig pre{2, 16, 0};
  const auto data = tiny_dataset(pre);
  TrainConfig t;
  t.epochs = 1;
  t.learning_rate = 1e-12;
  const TrainResult r = train_on_clouds(data, t, testutil::tiny_model(), pre);
  EXPECT_NEAR(r.final_model.params.regressor.biases.back()[0], 0.4, 1e-9);
}

TEST(Trainer, InvalidConfig) {
  TrainConfig t;
  t.epochs = 0;
  EXPECT_THROW(validate(t), ConfigError);
  t.epochs = 1;
  t.learning_rate = 0;
  EXPECT_THROW(validate(t), ConfigError);
}

TEST(Trainer, UnreadableCloudsAreSkipped) {
  const auto dir = testutil::scratch_dir("trainer");
  DatasetManifest m;
  m.entries.push_back({testutil::write_shape(dir, "a.ply", synthetic::Shape::sphere, 200, 1), 0.5, "a"});
  std::ofstream(dir / "bad.ply") << "not a ply";
  m.entries.push_back({(dir / "bad.ply").string(), 0.1, "b"});
  TrainConfig t;
  t.epochs = 2;
  std::vector<std::string> seen;
  t.on_warning = [&](const std::string& w) { seen.push_back(w); };
  const TrainResult r = train(m, t, testutil::tiny_model(), {2, 16, 0});
  EXPECT_EQ(r.steps, 2u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(seen, r.warnings);
  EXPECT_NE(r.warnings[0].find("bad.ply"), std::string::npos);

  m.entries.erase(m.entries.begin());
  try {
    train(m, t, testutil::tiny_model(), {2, 16, 0});
    FAIL();
  } catch (const TrainError& e) {
    EXPECT_EQ(e.kind(), "empty-epoch");
  }
}

TEST(Trainer, LossHistoryCsv) {
  EXPECT_EQ(loss_history_csv({0.5, 0.25}), "epoch,mean_loss\n1,0.5\n2,0.25\n");
}
