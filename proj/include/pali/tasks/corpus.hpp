#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pali/tasks/generators.hpp"
#include "pali/tasks/mixture.hpp"
#include "pali/tasks/scene.hpp"

namespace pali {

/// Classes used by the toy zero-shot classification split.
inline const std::vector<std::string>& classification_classes() {
  static const std::vector<std::string> classes = {"ball", "cone", "cross", "cube", "kite", "ring", "star", "vase"};
  return classes;
}

/// Zero-shot classification prompt; the class name fills the slot.
inline constexpr const char* kZeroShotPrompt = "Generate alt_text in EN at 2: Photo of <extra_id_0>";

struct CorpusConfig {
  std::uint64_t seed = 0;
  int num_scenes = 1000;
  int canvas = 224;
  /// Resolution of stored images and detection coordinates.
  int resolution = 56;
  double keep_fraction = 0.10;
  int hamming_threshold = 4;
  int examples_per_scene = 4;
  int eval_per_task = 32;
  /// Copies of kept training scenes planted into the VQA eval split.
  int plant_duplicates = 0;
  MixtureSpec mixture = MixtureSpec::pretraining();
  SceneOptions scene_options;

  void validate(const std::string& path = "corpus") const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

/// Held-out evaluation item with one or more reference strings.
struct EvalRecord {
  std::string id;
  std::string task;  // "vqa", "caption" or "classify"
  std::uint64_t scene_seed = 0;
  std::string input_text;
  std::vector<std::string> gold;
};

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);

struct Corpus {
  CorpusConfig config;
  std::map<std::uint64_t, SceneSpec> scenes;  // training and eval scenes
  std::vector<Example> records;
  std::map<std::string, std::vector<EvalRecord>> eval;
  nlohmann::json manifest;

  const SceneSpec& scene(std::uint64_t seed) const;
  /// Rendered image for an example (all zeros for text-only examples).
  TensorD image_for(const Example& ex, int resolution) const;
};

/// Generates candidate scenes, keeps the best-scoring alt-text pairs,
/// removes near-duplicates of the eval images, then samples task examples
/// from the mixture. Output is independent of `threads`.
Corpus build_corpus(const CorpusConfig& config, int threads = 1);

/// Layout: corpus.jsonl, scenes.jsonl, images/<seed>.ppm, eval/<task>.jsonl,
/// manifest.json.
void write_corpus(const Corpus& corpus, const std::string& dir);
/// Throws ArtifactError when the directory or a required file is missing.
Corpus read_corpus(const std::string& dir);

nlohmann::json example_to_json(const Example& ex);
Example example_from_json(const nlohmann::json& j);

/// Runs `fn(i)` for i in [0, n) over `threads` workers with a static split.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace pali
