#pragma once

namespace mfvit::ad {

enum class ScheduleKind { cosine_with_warmup, cosine_annealing };

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::cosine_with_warmup;
  double warmup_epochs = 0;
  double total_epochs = 1;
  double base_lr = 1e-3;
  double min_lr = 0.0;

  void validate() const;
};

// Learning rate at a (possibly fractional) epoch in [0, total_epochs):
// linear ramp 0 -> base over the warmup, then a half cosine from base_lr at
// the end of warmup to min_lr at the last epoch (total_epochs - 1).
double lr_at(const LrSchedule& schedule, double epoch);

// Linear scaling rule: lr * batch_size / 4.
constexpr double scaled_base_lr(double lr, int batch_size) { return lr * batch_size / 4.0; }

}  // namespace mfvit::ad
