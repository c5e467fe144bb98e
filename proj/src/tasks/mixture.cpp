#include "pali/tasks/mixture.hpp"

#include <cmath>

#include "pali/model/config.hpp"

namespace pali {

double MixtureSpec::total() const {
  double t = 0;
  for (double w : weights) t += w;
  return t;
}

void MixtureSpec::validate(const std::string& path) const {
  for (Task t : kAllTasks) {
    const double w = weight(t);
    if (!std::isfinite(w) || w < 0) {
      throw ConfigError(path + "." + std::string(task_name(t)), "weight must be finite and non-negative");
    }
  }
  if (!(total() > 0)) throw ConfigError(path, "at least one task weight must be positive");
}

MixtureSpec MixtureSpec::pretraining() { return {{100, 1000, 100, 100, 100, 100, 50, 16}}; }

MixtureSpec MixtureSpec::uniform(const std::vector<Task>& tasks) {
  MixtureSpec m;
  for (Task t : tasks) m.weight(t) = 1.0;
  return m;
}

void to_json(nlohmann::json& j, const MixtureSpec& m) {
  j = nlohmann::json::object();
  for (Task t : kAllTasks) j[std::string(task_name(t))] = m.weight(t);
}

void from_json(const nlohmann::json& j, MixtureSpec& m) {
  m = MixtureSpec{};
  for (const auto& [key, value] : j.items()) {
    Task t;
    try {
      t = parse_task(key);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("mixture." + key, e.what());
    }
    m.weight(t) = value.get<double>();
  }
}

Task sample_mixture(const MixtureSpec& mix, std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * mix.total();
  double cumulative = 0;
  Task last = kAllTasks[0];
  for (Task t : kAllTasks) {
    if (mix.weight(t) <= 0) continue;
    cumulative += mix.weight(t);
    last = t;
    if (u < cumulative) return t;
  }
  return last;
}

}  // namespace pali
