#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "npdet/tensor.hpp"

namespace npdet {

enum class OptimizerKind { sgdm, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgdm;
  double lr = 1e-2;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter moment buffers, allocated (zeroed) on the first step.
// SGDM uses `first_moment` as its velocity.
struct OptimizerState {
  OptimizerConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step_count = 0;

  explicit OptimizerState(OptimizerConfig cfg = {}) : config(cfg) {}
};

// SGDM:  v <- momentum * v + g;  p <- p - lr * v
// Adam:  bias-corrected first/second moments.
// Throws ShapeError when a parameter, its gradient, and its buffers disagree.
void optimizer_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads);

enum class SchedulePhase { main, finetune };

struct FinetuneSchedule {
  double start_lr = 1e-5;
  std::size_t epochs = 0;
  std::size_t batch_doubling_period_epochs = 10;
  std::size_t lr_halving_period_epochs = 10;
  bool stop_when_no_improvement = true;
};

struct TrainSchedule {
  std::size_t epochs = 10;
  double initial_lr = 2.5e-2;
  double lr_drop_factor = 0.5;
  std::size_t lr_drop_period_epochs = 2;
  std::size_t minibatch_size = 120;
  bool shuffle_each_epoch = true;
  std::optional<FinetuneSchedule> finetune;

  // Throws ConfigError on out-of-range fields.
  void validate() const;
};

// Main phase: initial_lr * drop^floor(epoch / period).
// Fine-tune phase: start_lr * 0.5^floor(epoch / halving period), epoch counted
// from the start of fine-tuning.
double schedule_lr(const TrainSchedule& schedule, std::size_t epoch, SchedulePhase phase);
// Fine-tune minibatch: base * 2^floor(epoch / doubling period).
std::size_t schedule_batch_size(const TrainSchedule& schedule, std::size_t base_batch, std::size_t epoch);

}  // namespace npdet
