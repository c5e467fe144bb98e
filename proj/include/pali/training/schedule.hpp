#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace pali {

/// Learning-rate schedule with a linear warmup to `peak_lr`.
struct Schedule {
  enum class Kind { warmup_inv_sqrt, linear_to_zero };

  Kind kind = Kind::warmup_inv_sqrt;
  int warmup_steps = 1000;
  double peak_lr = 1e-2;
  /// Only used by linear_to_zero.
  int total_steps = 0;

  static Schedule inv_sqrt(double peak_lr, int warmup_steps) { return {Kind::warmup_inv_sqrt, warmup_steps, peak_lr, 0}; }
  static Schedule linear(double peak_lr, int total_steps, int warmup_steps = 0) {
    return {Kind::linear_to_zero, warmup_steps, peak_lr, total_steps};
  }

  void validate(const std::string& path = "schedule") const;
};

/// warmup_inv_sqrt: peak*step/warmup up to warmup, then peak*sqrt(warmup/step).
/// linear_to_zero: same ramp, then peak*(total-step)/(total-warmup), 0 past total.
double lr_at_step(const Schedule& schedule, std::int64_t step);

std::string schedule_kind_name(Schedule::Kind kind);
Schedule::Kind parse_schedule_kind(const std::string& name);

void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);

}  // namespace pali
