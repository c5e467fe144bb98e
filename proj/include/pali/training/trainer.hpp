#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pali/model/checkpoint.hpp"
#include "pali/model/model.hpp"
#include "pali/tasks/corpus.hpp"
#include "pali/tasks/mixture.hpp"
#include "pali/tasks/tokenizer.hpp"
#include "pali/training/adafactor.hpp"
#include "pali/training/schedule.hpp"

namespace pali {

struct PhaseConfig {
  std::string name = "phase1";
  int resolution = 56;
  /// Parameters whose names start with any of these stay bit-identical.
  std::vector<std::string> frozen_prefixes;
  MixtureSpec mixture = MixtureSpec::pretraining();
  int steps = 100;
  int batch_size = 8;
  Schedule schedule = Schedule::inv_sqrt(1e-2, 100);
  /// Applied to attention and MLP outputs during training only.
  double dropout_rate = 0.0;

  void validate(const std::string& path = "phase") const;
  /// Low-resolution phase with the vision tower frozen.
  static PhaseConfig frozen_vision(int resolution, int steps, int batch_size);
  /// High-resolution phase over the equally weighted {ocr, cap, vqa} mixture.
  static PhaseConfig high_res(int resolution, int steps, int batch_size);
};

void to_json(nlohmann::json& j, const PhaseConfig& p);
void from_json(const nlohmann::json& j, PhaseConfig& p);

/// Tokenized training pair; `target` ends with EOS.
struct TrainItem {
  TensorD image;
  std::vector<int> input;
  std::vector<int> target;
};

struct TrainState {
  AdafactorState optimizer;
  /// Steps taken in the current phase; drives the learning-rate schedule.
  std::int64_t step = 0;
  std::int64_t tokens_seen = 0;
};

struct StepResult {
  double loss = 0;
  double lr = 0;
  std::int64_t tokens = 0;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  /// Examples processed concurrently; gradients are summed in batch order.
  int threads = 1;
};

Tokenizer tokenizer_for(const ModelConfig& config);

/// Prompt ids truncated to `max_len`.
std::vector<int> encode_prompt(const Tokenizer& tokenizer, const std::string& text, int max_len);
/// Target ids truncated to `max_len - 1`, followed by EOS.
std::vector<int> encode_target(const Tokenizer& tokenizer, const std::string& text, int max_len);

/// Renders corpus images once per (scene, resolution).
class ImageCache {
 public:
  explicit ImageCache(const Corpus& corpus) : corpus_(corpus) {}
  const TensorD& get(const Example& ex, int resolution);

 private:
  const Corpus& corpus_;
  std::map<std::pair<std::uint64_t, int>, TensorD> images_;
  std::map<int, TensorD> blanks_;
};

TrainItem make_train_item(const Tokenizer& tokenizer, const Example& ex, const TensorD& image, int max_text_len);

/// One optimizer step on the batch. The loss is the summed token
/// cross-entropy divided by the number of non-pad target tokens, measured
/// before the update. The learning rate is lr_at_step(schedule, step + 1).
/// Throws ShapeError when an image is not at phase.resolution, and
/// NumericError when the loss is not finite.
StepResult train_step(PaliModel<double>& model, const std::vector<TrainItem>& batch, const PhaseConfig& phase,
                      TrainState& state, const TrainOptions& options = {});

/// Fraction of target tokens whose teacher-forced argmax is correct.
double teacher_forced_accuracy(const PaliModel<double>& model, const std::vector<TrainItem>& items);

/// Draws a task from the mixture, then a corpus record of that task. When
/// the corpus has none, the example is generated from a training scene.
class BatchSampler {
 public:
  BatchSampler(const Corpus& corpus, MixtureSpec mixture, std::uint64_t seed, int resolution);
  Example next();

 private:
  const Corpus& corpus_;
  MixtureSpec mixture_;
  std::mt19937_64 rng_;
  int resolution_;
  std::array<std::vector<std::size_t>, kAllTasks.size()> by_task_;
  std::vector<std::uint64_t> scene_seeds_;
};

/// Cycles through a fixed example list in a fresh shuffled order per epoch.
class EpochSampler {
 public:
  EpochSampler(std::vector<Example> examples, std::uint64_t seed);
  const Example& next();

 private:
  std::vector<Example> examples_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;

struct RunOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  /// Receives {step, lr, loss, tokens_seen, phase} after every step.
  MetricsSink metrics;
  /// When set, checkpoints (and the metrics log, if `metrics` is unset) are
  /// written here.
  std::string out_dir;
};

/// Runs `phase.steps` steps drawing batches from `next_example`.
void run_phase(PaliModel<double>& model, const PhaseConfig& phase, const std::function<Example()>& next_example,
               ImageCache& images, TrainState& state, const RunOptions& options);

struct PretrainResult {
  Checkpoint<double> phase1;
  Checkpoint<double> phase2;
};

/// Phase 1 at the model's resolution, positional-embedding resize, then
/// phase 2. Writes phase1.ckpt, phase2.ckpt and metrics.jsonl when
/// options.out_dir is set.
PretrainResult run_pretraining(PaliModel<double> model, const PhaseConfig& phase1, const PhaseConfig& phase2,
                               const Corpus& corpus, const RunOptions& options = {});

Checkpoint<double> make_checkpoint(const PaliModel<double>& model, const TrainState& state, std::int64_t total_steps,
                                   nlohmann::json meta);

/// Appends one JSON line per record to `path` (truncating it first).
MetricsSink jsonl_sink(const std::string& path);

}  // namespace pali
