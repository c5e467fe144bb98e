#include "pali/training/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "pali/model/config.hpp"

namespace pali {

void Schedule::validate(const std::string& path) const {
  if (warmup_steps < 0) throw ConfigError(path + ".warmup_steps", "must be non-negative");
  if (!(peak_lr >= 0) || !std::isfinite(peak_lr)) throw ConfigError(path + ".peak_lr", "must be finite and non-negative");
  if (kind == Kind::linear_to_zero && total_steps <= warmup_steps) {
    throw ConfigError(path + ".total_steps", "must exceed warmup_steps for linear_to_zero");
  }
}

double lr_at_step(const Schedule& s, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lr_at_step: step must be non-negative, got " + std::to_string(step));
  const auto t = static_cast<double>(step);
  const auto w = static_cast<double>(s.warmup_steps);
  if (step <= s.warmup_steps) return s.warmup_steps == 0 ? s.peak_lr : s.peak_lr * t / w;
  switch (s.kind) {
    case Schedule::Kind::warmup_inv_sqrt:
      return s.peak_lr * std::sqrt(std::max(w, 1.0) / t);
    case Schedule::Kind::linear_to_zero: {
      if (step >= s.total_steps) return 0.0;
      const auto total = static_cast<double>(s.total_steps);
      return s.peak_lr * (total - t) / (total - w);
    }
  }
  return 0.0;
}

std::string schedule_kind_name(Schedule::Kind kind) {
  return kind == Schedule::Kind::warmup_inv_sqrt ? "warmup_inv_sqrt" : "linear_to_zero";
}

Schedule::Kind parse_schedule_kind(const std::string& name) {
  if (name == "warmup_inv_sqrt") return Schedule::Kind::warmup_inv_sqrt;
  if (name == "linear_to_zero") return Schedule::Kind::linear_to_zero;
  throw ConfigError("schedule.kind", "unknown schedule '" + name + "' (known: warmup_inv_sqrt, linear_to_zero)");
}

void to_json(nlohmann::json& j, const Schedule& s) {
  j = {{"kind", schedule_kind_name(s.kind)},
       {"warmup_steps", s.warmup_steps},
       {"peak_lr", s.peak_lr},
       {"total_steps", s.total_steps}};
}

void from_json(const nlohmann::json& j, Schedule& s) {
  if (j.contains("kind")) s.kind = parse_schedule_kind(j.at("kind").get<std::string>());
  if (j.contains("warmup_steps")) j.at("warmup_steps").get_to(s.warmup_steps);
  if (j.contains("peak_lr")) j.at("peak_lr").get_to(s.peak_lr);
  if (j.contains("total_steps")) j.at("total_steps").get_to(s.total_steps);
}

}  // namespace pali
