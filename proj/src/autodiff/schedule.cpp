#include "mfvit/schedule.hpp"

#include <cmath>
#include <numbers>

#include "mfvit/error.hpp"

namespace mfvit::ad {

void LrSchedule::validate() const {
  const double warmup = kind == ScheduleKind::cosine_annealing ? 0.0 : warmup_epochs;
  if (!(warmup >= 0.0 && warmup < total_epochs)) throw ConfigError("schedule needs 0 <= warmup < total epochs");
  if (!(min_lr <= base_lr)) throw ConfigError("schedule needs min_lr <= base_lr");
}

double lr_at(const LrSchedule& s, double epoch) {
  s.validate();
  const double warmup = s.kind == ScheduleKind::cosine_annealing ? 0.0 : s.warmup_epochs;
  if (epoch < warmup) return s.base_lr * epoch / warmup;
  const double span = s.total_epochs - 1.0 - warmup;
  const double t = span > 0.0 ? std::min(1.0, (epoch - warmup) / span) : 0.0;
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace mfvit::ad
