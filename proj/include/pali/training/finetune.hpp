#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pali/training/trainer.hpp"

namespace pali {

/// Named fine-tuning recipe. Dropout 0.1, batch 256 and linear decay to zero
/// are shared by every preset.
struct FinetunePreset {
  std::string name;
  Task task;
  int steps;
  double peak_lr;
};

const std::vector<FinetunePreset>& finetune_presets();
/// Throws ConfigError listing the known presets.
const FinetunePreset& finetune_preset(const std::string& name);

struct FinetuneConfig {
  std::string preset = "coco-like";
  /// Preset step counts are divided by this (rounded down, at least 1).
  int steps_divisor = 1;
  int batch_size = 256;
  double dropout_rate = 0.1;
  int warmup_steps = 0;
  /// 0 keeps the checkpoint's resolution.
  int resolution = 0;
  std::optional<int> steps;
  std::optional<double> peak_lr;

  void validate(const std::string& path = "finetune") const;
  int resolved_steps() const;
  PhaseConfig phase(const ModelConfig& model) const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

/// `count` examples of `task` generated from the corpus' training scenes.
std::vector<Example> finetune_dataset(const Corpus& corpus, Task task, int count, std::uint64_t seed);

/// Trains all parameters on `dataset` (epoch-shuffled) with the resolved
/// preset. Images are rendered from `corpus` scenes.
Checkpoint<double> finetune(const Checkpoint<double>& start, const std::vector<Example>& dataset, const Corpus& corpus,
                            const FinetuneConfig& config, const RunOptions& options = {});

}  // namespace pali
