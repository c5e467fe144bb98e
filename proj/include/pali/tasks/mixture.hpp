#pragma once

#include <array>
#include <random>
#include <vector>

#include "json.hpp"
#include "pali/model/config.hpp"
#include "pali/tasks/generators.hpp"

namespace pali {

/// Relative task weights, indexed in kAllTasks order.
struct MixtureSpec {
  std::array<double, 8> weights{};

  double weight(Task t) const { return weights[static_cast<std::size_t>(t)]; }
  double& weight(Task t) { return weights[static_cast<std::size_t>(t)]; }
  double total() const;
  double probability(Task t) const { return weight(t) / total(); }
  /// Throws ConfigError when a weight is negative/non-finite or all are zero.
  void validate(const std::string& path = "mixture") const;

  /// Pre-training ratios in millions of examples: span 100, split_cap 1000,
  /// ocr 100, cap 100, vqa 100, vqg 100, oa 50, det 16 (total 1566).
  static MixtureSpec pretraining();
  /// Equal weight on each listed task.
  static MixtureSpec uniform(const std::vector<Task>& tasks);
};

void to_json(nlohmann::json& j, const MixtureSpec& m);
void from_json(const nlohmann::json& j, MixtureSpec& m);

/// Draws a task with probability weight / total using 53 random bits.
Task sample_mixture(const MixtureSpec& mix, std::mt19937_64& rng);

}  // namespace pali
