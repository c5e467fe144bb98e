#include "pali/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace pali {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void accumulate(GradientMap<double>& into, GradientMap<double>&& g) {
  if (into.empty()) {
    into = std::move(g);
    return;
  }
  for (auto& [name, t] : g) into.at(name).vec() += t.vec();
}

}  // namespace

void PhaseConfig::validate(const std::string& path) const {
  if (resolution <= 0) throw ConfigError(path + ".resolution", "must be positive");
  if (steps < 0) throw ConfigError(path + ".steps", "must be non-negative");
  if (batch_size <= 0) throw ConfigError(path + ".batch_size", "must be positive");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError(path + ".dropout_rate", "must be in [0, 1)");
  mixture.validate(path + ".mixture");
  schedule.validate(path + ".schedule");
}

PhaseConfig PhaseConfig::frozen_vision(int resolution, int steps, int batch_size) {
  PhaseConfig p;
  p.name = "phase1";
  p.resolution = resolution;
  p.frozen_prefixes = {"vit."};
  p.steps = steps;
  p.batch_size = batch_size;
  p.schedule = Schedule::inv_sqrt(1e-2, std::min(1000, std::max(1, steps / 10)));
  return p;
}

PhaseConfig PhaseConfig::high_res(int resolution, int steps, int batch_size) {
  PhaseConfig p;
  p.name = "phase2";
  p.resolution = resolution;
  p.mixture = MixtureSpec::uniform({Task::ocr, Task::cap, Task::vqa});
  p.steps = steps;
  p.batch_size = batch_size;
  p.schedule = Schedule::linear(1e-3, std::max(steps, 2), std::max(1, steps / 10));
  return p;
}

void to_json(nlohmann::json& j, const PhaseConfig& p) {
  j = {{"name", p.name},
       {"resolution", p.resolution},
       {"frozen_prefixes", p.frozen_prefixes},
       {"mixture", p.mixture},
       {"steps", p.steps},
       {"batch_size", p.batch_size},
       {"schedule", p.schedule},
       {"dropout_rate", p.dropout_rate}};
}

void from_json(const nlohmann::json& j, PhaseConfig& p) {
  if (j.contains("name")) j.at("name").get_to(p.name);
  if (j.contains("resolution")) j.at("resolution").get_to(p.resolution);
  if (j.contains("frozen_prefixes")) j.at("frozen_prefixes").get_to(p.frozen_prefixes);
  if (j.contains("mixture")) j.at("mixture").get_to(p.mixture);
  if (j.contains("steps")) j.at("steps").get_to(p.steps);
  if (j.contains("batch_size")) j.at("batch_size").get_to(p.batch_size);
  if (j.contains("schedule")) j.at("schedule").get_to(p.schedule);
  if (j.contains("dropout_rate")) j.at("dropout_rate").get_to(p.dropout_rate);
}

Tokenizer tokenizer_for(const ModelConfig& config) {
  return Tokenizer(config.encdec.vocab_size, config.encdec.num_sentinels);
}

std::vector<int> encode_prompt(const Tokenizer& tokenizer, const std::string& text, int max_len) {
  auto ids = tokenizer.encode(text);
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  return ids;
}

std::vector<int> encode_target(const Tokenizer& tokenizer, const std::string& text, int max_len) {
  if (max_len < 1) throw std::invalid_argument("encode_target: max_len must be at least 1");
  auto ids = tokenizer.encode(text);
  if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<std::size_t>(max_len - 1));
  ids.push_back(kEosId);
  return ids;
}

const TensorD& ImageCache::get(const Example& ex, int resolution) {
  if (ex.blank_image) {
    auto it = blanks_.find(resolution);
    if (it == blanks_.end()) it = blanks_.emplace(resolution, TensorD(Shape{resolution, resolution, 3})).first;
    return it->second;
  }
  const auto key = std::make_pair(ex.scene_seed, resolution);
  auto it = images_.find(key);
  if (it == images_.end()) it = images_.emplace(key, render_scene(corpus_.scene(ex.scene_seed), resolution)).first;
  return it->second;
}

TrainItem make_train_item(const Tokenizer& tokenizer, const Example& ex, const TensorD& image, int max_text_len) {
  return {image, encode_prompt(tokenizer, ex.input_text, max_text_len), encode_target(tokenizer, ex.target_text, max_text_len)};
}

StepResult train_step(PaliModel<double>& model, const std::vector<TrainItem>& batch, const PhaseConfig& phase,
                      TrainState& state, const TrainOptions& options) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  for (const auto& item : batch) {
    if (item.image.rank() != 3 || item.image.dim(0) != phase.resolution || item.image.dim(1) != phase.resolution) {
      throw ShapeError("train_step: image shape " + shape_string(item.image.shape()) + " does not match phase resolution " +
                       std::to_string(phase.resolution));
    }
  }
  if (model.config.vit.image_resolution != phase.resolution) {
    throw ShapeError("train_step: model expects resolution " + std::to_string(model.config.vit.image_resolution) +
                     " but phase '" + phase.name + "' runs at " + std::to_string(phase.resolution));
  }

  std::int64_t tokens = 0;
  for (const auto& item : batch) tokens += std::count_if(item.target.begin(), item.target.end(), [](int t) { return t != kPadId; });
  if (tokens == 0) throw std::invalid_argument("train_step: batch has no target tokens");

  const auto step = state.step + 1;
  const auto workers = static_cast<std::size_t>(std::max(1, options.threads));
  GradientMap<double> total;
  double loss_sum = 0;
  for (std::size_t start = 0; start < batch.size(); start += workers) {
    const auto count = std::min(workers, batch.size() - start);
    std::vector<GradientMap<double>> grads(count);
    std::vector<double> losses(count);
    parallel_for(count, static_cast<int>(count), [&](std::size_t k) {
      const auto i = start + k;
      ForwardOptions<double> fwd;
      fwd.dropout_rate = phase.dropout_rate;
      fwd.dropout_seed = mix_seed(options.seed, static_cast<std::uint64_t>(step), i);
      Tape<double> tape;
      Graph<double> graph(tape, model.params, phase.frozen_prefixes);
      PaliGraph<double> pg(graph, model.config, fwd);
      const auto loss = pg.loss(batch[i].image, batch[i].input, batch[i].target, Reduction::sum);
      losses[k] = loss.value().item();
      grads[k] = backward(loss);
    });
    for (std::size_t k = 0; k < count; ++k) {
      loss_sum += losses[k];
      accumulate(total, std::move(grads[k]));
    }
  }
  const double loss = loss_sum / static_cast<double>(tokens);
  if (!std::isfinite(loss)) throw NumericError("train_step: non-finite loss at step " + std::to_string(step));
  const double inv = 1.0 / static_cast<double>(tokens);
  for (auto& [_, g] : total) g.vec() *= inv;

  const double lr = lr_at_step(phase.schedule, step);
  adafactor_update(state.optimizer, model.params, total, lr, phase.frozen_prefixes);
  state.step = step;
  state.tokens_seen += tokens;
  return {loss, lr, tokens};
}

double teacher_forced_accuracy(const PaliModel<double>& model, const std::vector<TrainItem>& items) {
  std::int64_t correct = 0, total = 0;
  for (const auto& item : items) {
    const auto visual = visual_tokens(model, item.image);
    const auto encoded = encode_multimodal(model, item.input, visual);
    const auto logits = decode_teacher_forced(model, encoded, item.target);
    const auto m = logits.matrix();
    for (Index t = 0; t < m.rows(); ++t) {
      const int gold = item.target[static_cast<std::size_t>(t)];
      if (gold == kPadId) continue;
      Index best = 0;
      m.row(t).maxCoeff(&best);
      correct += best == gold;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

BatchSampler::BatchSampler(const Corpus& corpus, MixtureSpec mixture, std::uint64_t seed, int resolution)
    : corpus_(corpus), mixture_(std::move(mixture)), rng_(seed), resolution_(resolution) {
  mixture_.validate("mixture");
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    by_task_[static_cast<std::size_t>(corpus.records[i].task)].push_back(i);
    scene_seeds_.push_back(corpus.records[i].scene_seed);
  }
  std::sort(scene_seeds_.begin(), scene_seeds_.end());
  scene_seeds_.erase(std::unique(scene_seeds_.begin(), scene_seeds_.end()), scene_seeds_.end());
  if (scene_seeds_.empty()) throw std::invalid_argument("BatchSampler: corpus has no training records");
}

Example BatchSampler::next() {
  const Task task = sample_mixture(mixture_, rng_);
  const auto& pool = by_task_[static_cast<std::size_t>(task)];
  if (!pool.empty()) return corpus_.records[pool[uniform_index(rng_, pool.size())]];
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto& scene = corpus_.scene(scene_seeds_[uniform_index(rng_, scene_seeds_.size())]);
    if (task == Task::ocr && scene.glyphs.empty()) continue;
    return make_example(task, scene, rng_, resolution_);
  }
  throw std::runtime_error("BatchSampler: no corpus scene supports task " + std::string(task_name(task)));
}

EpochSampler::EpochSampler(std::vector<Example> examples, std::uint64_t seed) : examples_(std::move(examples)), rng_(seed) {
  if (examples_.empty()) throw std::invalid_argument("EpochSampler: no examples");
  order_.resize(examples_.size());
  pos_ = order_.size();
}

const Example& EpochSampler::next() {
  if (pos_ == order_.size()) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    shuffle_in_place(order_, rng_);
    pos_ = 0;
  }
  return examples_[order_[pos_++]];
}

void run_phase(PaliModel<double>& model, const PhaseConfig& phase, const std::function<Example()>& next_example,
               ImageCache& images, TrainState& state, const RunOptions& options) {
  phase.validate(phase.name);
  const auto tokenizer = tokenizer_for(model.config);
  const int max_len = model.config.encdec.max_text_len;
  TrainOptions train{options.seed, options.threads};
  for (int s = 0; s < phase.steps; ++s) {
    std::vector<TrainItem> batch;
    batch.reserve(static_cast<std::size_t>(phase.batch_size));
    for (int b = 0; b < phase.batch_size; ++b) {
      const Example ex = next_example();
      batch.push_back(make_train_item(tokenizer, ex, images.get(ex, phase.resolution), max_len));
    }
    const auto result = train_step(model, batch, phase, state, train);
    if (options.metrics) {
      options.metrics({{"phase", phase.name},
                       {"step", state.step},
                       {"lr", result.lr},
                       {"loss", result.loss},
                       {"tokens_seen", state.tokens_seen}});
    }
  }
}

Checkpoint<double> make_checkpoint(const PaliModel<double>& model, const TrainState& state, std::int64_t total_steps,
                                   nlohmann::json meta) {
  Checkpoint<double> ckpt;
  ckpt.config = model.config;
  ckpt.params = model.params;
  ckpt.optimizer = state.optimizer.export_slots();
  ckpt.step = total_steps;
  ckpt.meta = std::move(meta);
  ckpt.meta["tokens_seen"] = state.tokens_seen;
  return ckpt;
}

MetricsSink jsonl_sink(const std::string& path) {
  auto out = std::make_shared<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*out) throw std::runtime_error("cannot write metrics log: " + path);
  return [out](const nlohmann::json& record) {
    *out << record.dump() << '\n';
    out->flush();
  };
}

PretrainResult run_pretraining(PaliModel<double> model, const PhaseConfig& phase1, const PhaseConfig& phase2,
                               const Corpus& corpus, const RunOptions& options) {
  phase1.validate("phase1");
  phase2.validate("phase2");
  if (phase2.resolution < phase1.resolution) {
    throw ConfigError("phase2.resolution", "must be at least phase1.resolution (" + std::to_string(phase1.resolution) + ")");
  }
  if (model.config.vit.image_resolution != phase1.resolution) {
    throw ConfigError("phase1.resolution", "model is configured for resolution " +
                                               std::to_string(model.config.vit.image_resolution));
  }
  RunOptions run = options;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    if (!run.metrics) run.metrics = jsonl_sink((std::filesystem::path(options.out_dir) / "metrics.jsonl").string());
  }

  ImageCache images(corpus);
  TrainState state;
  BatchSampler sampler1(corpus, phase1.mixture, mix_seed(options.seed, 1, 0), phase1.resolution);
  run_phase(model, phase1, [&] { return sampler1.next(); }, images, state, run);
  PretrainResult result;
  result.phase1 = make_checkpoint(model, state, phase1.steps, {{"phase", phase1.name}, {"phase_config", phase1}});

  if (phase2.resolution != phase1.resolution) {
    model = resize_positional_embeddings(model, phase2.resolution);
    // Accumulators of resized tensors no longer match their parameter.
    for (auto it = state.optimizer.slots.begin(); it != state.optimizer.slots.end();) {
      it = it->first.starts_with("vit.pos") ? state.optimizer.slots.erase(it) : std::next(it);
    }
  }
  state.step = 0;
  BatchSampler sampler2(corpus, phase2.mixture, mix_seed(options.seed, 2, 0), phase2.resolution);
  run_phase(model, phase2, [&] { return sampler2.next(); }, images, state, run);
  result.phase2 = make_checkpoint(model, state, phase1.steps + phase2.steps, {{"phase", phase2.name}, {"phase_config", phase2}});

  if (!options.out_dir.empty()) {
    save_checkpoint((std::filesystem::path(options.out_dir) / "phase1.ckpt").string(), result.phase1);
    save_checkpoint((std::filesystem::path(options.out_dir) / "phase2.ckpt").string(), result.phase2);
  }
  return result;
}

}  // namespace pali
