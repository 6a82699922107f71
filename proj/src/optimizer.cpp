#include "npdet/optimizer.hpp"

#include <cmath>
#include <string>

#include "npdet/error.hpp"

namespace npdet {

void optimizer_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  const bool adam = state.config.kind == OptimizerKind::adam;
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      if (adam) state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("optimizer_step: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *grads[i], "optimizer_step gradient");
    require_same_shape(*params[i], state.first_moment[i], "optimizer_step moment buffer");
  }

  ++state.step_count;
  const OptimizerConfig& cfg = state.config;
  if (!adam) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* p = params[i]->data();
      const double* g = grads[i]->data();
      double* v = state.first_moment[i].data();
      for (std::size_t j = 0; j < params[i]->size(); ++j) {
        v[j] = cfg.momentum * v[j] + g[j];
        p[j] -= cfg.lr * v[j];
      }
    }
    return;
  }
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    const double* g = grads[i]->data();
    double* m = state.first_moment[i].data();
    double* v = state.second_moment[i].data();
    for (std::size_t j = 0; j < params[i]->size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

void TrainSchedule::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (minibatch_size < 1) throw ConfigError("minibatch size must be at least 1");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw ConfigError("lr drop factor must lie in (0, 1]");
  if (lr_drop_period_epochs < 1) throw ConfigError("lr drop period must be at least 1 epoch");
  if (!(initial_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (finetune) {
    if (!(finetune->start_lr > 0.0)) throw ConfigError("fine-tune learning rate must be positive");
    if (finetune->batch_doubling_period_epochs < 1 || finetune->lr_halving_period_epochs < 1) {
      throw ConfigError("fine-tune periods must be at least 1 epoch");
    }
  }
}

double schedule_lr(const TrainSchedule& schedule, std::size_t epoch, SchedulePhase phase) {
  if (phase == SchedulePhase::main) {
    const auto drops = static_cast<double>(epoch / schedule.lr_drop_period_epochs);
    return schedule.initial_lr * std::pow(schedule.lr_drop_factor, drops);
  }
  const FinetuneSchedule ft = schedule.finetune.value_or(FinetuneSchedule{});
  const auto halvings = static_cast<double>(epoch / ft.lr_halving_period_epochs);
  return ft.start_lr * std::pow(0.5, halvings);
}

std::size_t schedule_batch_size(const TrainSchedule& schedule, std::size_t base_batch, std::size_t epoch) {
  const FinetuneSchedule ft = schedule.finetune.value_or(FinetuneSchedule{});
  return base_batch << (epoch / ft.batch_doubling_period_epochs);
}

}  // namespace npdet
