#include "pali/training/finetune.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

namespace pali {

const std::vector<FinetunePreset>& finetune_presets() {
  static const std::vector<FinetunePreset> presets = {
      {"coco-like", Task::cap, 20000, 3e-5},       {"textcaps-like", Task::cap, 10000, 1e-4},
      {"vizwiz-cap-like", Task::cap, 5000, 1e-4},  {"vqav2-like", Task::vqa, 20000, 1e-4},
      {"textvqa-like", Task::ocr, 5000, 1e-4},     {"vizwiz-qa-like", Task::vqa, 5000, 1e-4},
      {"okvqa-like", Task::vqa, 5000, 3e-5},       {"stvqa-like", Task::ocr, 5000, 1e-4},
  };
  return presets;
}

const FinetunePreset& finetune_preset(const std::string& name) {
  for (const auto& p : finetune_presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : finetune_presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("finetune.preset", "unknown preset '" + name + "' (known: " + known + ")");
}

void FinetuneConfig::validate(const std::string& path) const {
  finetune_preset(preset);
  if (steps_divisor < 1) throw ConfigError(path + ".steps_divisor", "must be at least 1");
  if (batch_size < 1) throw ConfigError(path + ".batch_size", "must be positive");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError(path + ".dropout_rate", "must be in [0, 1)");
  if (warmup_steps < 0) throw ConfigError(path + ".warmup_steps", "must be non-negative");
  if (resolution < 0) throw ConfigError(path + ".resolution", "must be non-negative");
  if (steps && *steps < 1) throw ConfigError(path + ".steps", "must be positive");
  if (peak_lr && !(*peak_lr >= 0)) throw ConfigError(path + ".peak_lr", "must be non-negative");
  if (warmup_steps >= resolved_steps()) throw ConfigError(path + ".warmup_steps", "must be below the number of steps");
}

int FinetuneConfig::resolved_steps() const {
  if (steps) return *steps;
  return std::max(1, finetune_preset(preset).steps / std::max(1, steps_divisor));
}

PhaseConfig FinetuneConfig::phase(const ModelConfig& model) const {
  const auto& p = finetune_preset(preset);
  PhaseConfig phase;
  phase.name = "finetune";
  phase.resolution = resolution > 0 ? resolution : model.vit.image_resolution;
  phase.mixture = MixtureSpec::uniform({p.task});
  phase.steps = resolved_steps();
  phase.batch_size = batch_size;
  phase.schedule = Schedule::linear(peak_lr.value_or(p.peak_lr), phase.steps, warmup_steps);
  phase.dropout_rate = dropout_rate;
  return phase;
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"preset", c.preset},
       {"steps_divisor", c.steps_divisor},
       {"batch_size", c.batch_size},
       {"dropout_rate", c.dropout_rate},
       {"warmup_steps", c.warmup_steps},
       {"resolution", c.resolution},
       {"steps", c.resolved_steps()},
       {"peak_lr", c.peak_lr.value_or(finetune_preset(c.preset).peak_lr)}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  if (j.contains("preset")) j.at("preset").get_to(c.preset);
  if (j.contains("steps_divisor")) j.at("steps_divisor").get_to(c.steps_divisor);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("dropout_rate")) j.at("dropout_rate").get_to(c.dropout_rate);
  if (j.contains("warmup_steps")) j.at("warmup_steps").get_to(c.warmup_steps);
  if (j.contains("resolution")) j.at("resolution").get_to(c.resolution);
  if (j.contains("steps")) c.steps = j.at("steps").get<int>();
  if (j.contains("peak_lr")) c.peak_lr = j.at("peak_lr").get<double>();
}

std::vector<Example> finetune_dataset(const Corpus& corpus, Task task, int count, std::uint64_t seed) {
  std::set<std::uint64_t> seeds;
  for (const auto& r : corpus.records) seeds.insert(r.scene_seed);
  std::vector<std::uint64_t> pool;
  for (auto s : seeds) {
    if (task != Task::ocr || !corpus.scene(s).glyphs.empty()) pool.push_back(s);
  }
  if (pool.empty()) throw std::invalid_argument("finetune_dataset: corpus has no scene usable for " + std::string(task_name(task)));
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) {
    out.push_back(make_example(task, corpus.scene(pool[uniform_index(rng, pool.size())]), rng, corpus.config.resolution));
  }
  return out;
}

Checkpoint<double> finetune(const Checkpoint<double>& start, const std::vector<Example>& dataset, const Corpus& corpus,
                            const FinetuneConfig& config, const RunOptions& options) {
  config.validate();
  PaliModel<double> model{start.config, start.params};
  const auto phase = config.phase(model.config);
  if (phase.resolution != model.config.vit.image_resolution) model = resize_positional_embeddings(model, phase.resolution);

  RunOptions run = options;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    if (!run.metrics) run.metrics = jsonl_sink((std::filesystem::path(options.out_dir) / "metrics.jsonl").string());
  }
  // Optimizer state is not carried over from pre-training.
  TrainState state;
  ImageCache images(corpus);
  EpochSampler sampler(dataset, options.seed);
  run_phase(model, phase, [&] { return sampler.next(); }, images, state, run);

  auto ckpt = make_checkpoint(model, state, start.step + phase.steps,
                              {{"phase", "finetune"}, {"finetune", config}, {"phase_config", phase}});
  if (!options.out_dir.empty()) save_checkpoint((std::filesystem::path(options.out_dir) / "finetune.ckpt").string(), ckpt);
  return ckpt;
}

}  // namespace pali
