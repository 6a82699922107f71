#include <gtest/gtest.h>

#include <vector>

#include "gradcheck.hpp"
#include "npdet/error.hpp"
#include "npdet/layers.hpp"
#include "npdet/optimizer.hpp"

namespace npdet {
namespace {

double step_once(OptimizerState& state, Tensor& p, const Tensor& g) {
  const double before = p[0];
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&g};
  optimizer_step(state, params, grads);
  return p[0] - before;
}

TEST(Sgdm, ZeroGradientLeavesParametersUnchanged) {
  OptimizerState state({OptimizerKind::sgdm, 0.1, 0.9});
  Tensor p({3}, std::vector<double>{1, -2, 3});
  const Tensor before = p;
  step_once(state, p, Tensor({3}));
  EXPECT_EQ(p, before);
}

TEST(Sgdm, ZeroMomentumIsPlainGradientDescent) {
  OptimizerState state({OptimizerKind::sgdm, 0.5, 0.0});
  Tensor p({2}, std::vector<double>{1, 1});
  const Tensor g({2}, std::vector<double>{0.2, -0.4});
  step_once(state, p, g);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.5 * 0.2);
  EXPECT_DOUBLE_EQ(p[1], 1.0 + 0.5 * 0.4);
}

TEST(Sgdm, TwoStepRecurrence) {
  OptimizerState state({OptimizerKind::sgdm, 0.1, 0.9});
  Tensor p({1}, 0.0);
  const Tensor g({1}, 1.0);
  EXPECT_NEAR(step_once(state, p, g), -0.1, 1e-15);
  EXPECT_NEAR(step_once(state, p, g), -0.19, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::adam;
  cfg.lr = 1e-3;
  OptimizerState state(cfg);
  Tensor p({2}, 0.0);
  const Tensor g({2}, std::vector<double>{3.0, -0.01});
  step_once(state, p, g);
  // Bias-corrected m/sqrt(v) is sign(g) on the first step.
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1e-3, 1e-6);
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Optimizer, RejectsShapeMismatch) {
  OptimizerState state;
  Tensor p({2});
  const Tensor g({3});
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&g};
  EXPECT_THROW(optimizer_step(state, params, grads), ShapeError);
}

TEST(Optimizer, IdenticalRunsAreBitIdentical) {
  auto run = [](OptimizerKind kind) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    OptimizerState state(cfg);
    Rng rng(3);
    Tensor p = testing::random_tensor({16}, rng);
    for (int i = 0; i < 50; ++i) {
      const Tensor g = testing::random_tensor({16}, rng);
      Tensor* params[] = {&p};
      const Tensor* grads[] = {&g};
      optimizer_step(state, params, grads);
    }
    return p;
  };
  EXPECT_EQ(run(OptimizerKind::sgdm), run(OptimizerKind::sgdm));
  EXPECT_EQ(run(OptimizerKind::adam), run(OptimizerKind::adam));
}

TEST(Schedule, MainPhaseHalvesEveryTwoEpochs) {
  TrainSchedule s;
  EXPECT_DOUBLE_EQ(schedule_lr(s, 0, SchedulePhase::main), 2.5e-2);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 1, SchedulePhase::main), 2.5e-2);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 2, SchedulePhase::main), 1.25e-2);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 4, SchedulePhase::main), 6.25e-3);
}

TEST(Schedule, FinetuneHalvesLrAndDoublesBatch) {
  TrainSchedule s;
  s.finetune = FinetuneSchedule{};
  EXPECT_DOUBLE_EQ(schedule_lr(s, 0, SchedulePhase::finetune), 1e-5);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 10, SchedulePhase::finetune), 5e-6);
  EXPECT_EQ(schedule_batch_size(s, 120, 9), 120u);
  EXPECT_EQ(schedule_batch_size(s, 120, 10), 240u);
  EXPECT_EQ(schedule_batch_size(s, 120, 20), 480u);
}

TEST(Schedule, UnitDropFactorIsConstant) {
  TrainSchedule s;
  s.lr_drop_factor = 1.0;
  for (std::size_t e = 0; e < 30; ++e) EXPECT_EQ(schedule_lr(s, e, SchedulePhase::main), s.initial_lr);
}

TEST(Schedule, ValidateRejectsBadFields) {
  TrainSchedule s;
  EXPECT_NO_THROW(s.validate());
  s.epochs = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = TrainSchedule{};
  s.lr_drop_factor = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = TrainSchedule{};
  s.initial_lr = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

// Linearly separable toy: two clusters, one FC layer, 200 full-batch steps.
TEST(Sgdm, ReducesToyLossByNinetyPercent) {
  Rng rng(21);
  const std::size_t n = 40;
  Tensor x({n, 2});
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = i % 2;
    const double side = labels[i] == 0 ? -1.0 : 1.0;
    x[i * 2] = side * rng.uniform(0.5, 1.5);
    x[i * 2 + 1] = rng.uniform(-1.0, 1.0);
  }
  FcLayer layer = FcLayer::create(2, 2);
  layer.initialize(rng);
  OptimizerState state({OptimizerKind::sgdm, 0.05, 0.9});
  auto loss_and_grads = [&](FcBackward* out) {
    const auto [logits, cache] = fc_forward(layer, x);
    const SoftmaxLoss l = softmax_cross_entropy(logits, labels);
    if (out) *out = fc_backward(layer, cache, l.grad_logits);
    return l.loss;
  };
  const double initial = loss_and_grads(nullptr);
  double previous = initial;
  for (int step = 0; step < 200; ++step) {
    FcBackward back;
    const double current = loss_and_grads(&back);
    if (step > 0) EXPECT_LE(current, previous);
    previous = current;
    Tensor* params[] = {&layer.weights, &layer.bias};
    const Tensor* grads[] = {&back.grad_weights, &back.grad_bias};
    optimizer_step(state, params, grads);
  }
  EXPECT_LE(loss_and_grads(nullptr), 0.1 * initial);
}

}  // namespace
}  // namespace npdet
