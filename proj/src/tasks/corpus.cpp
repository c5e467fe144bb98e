#include "pali/tasks/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

#include "pali/model/config.hpp"
#include "pali/tasks/filter.hpp"

namespace fs = std::filesystem;

namespace pali {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ (index * 0xc2b2ae3d27d4eb4fULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum Stream : std::uint64_t { kCandidates = 1, kEvalScenes = 2, kRecords = 3, kEvalQuestions = 4 };

void write_lines(const fs::path& path, const std::vector<nlohmann::json>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& j : lines) out << j.dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<nlohmann::json> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("missing corpus file: " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * n / workers; i < (w + 1) * n / workers; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void CorpusConfig::validate(const std::string& path) const {
  if (num_scenes <= 0) throw ConfigError(path + ".num_scenes", "must be positive");
  if (canvas <= 0) throw ConfigError(path + ".canvas", "must be positive");
  if (resolution < 8) throw ConfigError(path + ".resolution", "must be at least 8");
  if (!(keep_fraction > 0 && keep_fraction <= 1)) throw ConfigError(path + ".keep_fraction", "must be in (0, 1]");
  if (hamming_threshold < 0) throw ConfigError(path + ".hamming_threshold", "must be non-negative");
  if (examples_per_scene <= 0) throw ConfigError(path + ".examples_per_scene", "must be positive");
  if (eval_per_task < 0) throw ConfigError(path + ".eval_per_task", "must be non-negative");
  if (plant_duplicates < 0) throw ConfigError(path + ".plant_duplicates", "must be non-negative");
  mixture.validate(path + ".mixture");
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = {{"seed", c.seed},
       {"num_scenes", c.num_scenes},
       {"canvas", c.canvas},
       {"resolution", c.resolution},
       {"keep_fraction", c.keep_fraction},
       {"hamming_threshold", c.hamming_threshold},
       {"examples_per_scene", c.examples_per_scene},
       {"eval_per_task", c.eval_per_task},
       {"plant_duplicates", c.plant_duplicates},
       {"mixture", c.mixture}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  read_optional(j, "seed", c.seed);
  read_optional(j, "num_scenes", c.num_scenes);
  read_optional(j, "canvas", c.canvas);
  read_optional(j, "resolution", c.resolution);
  read_optional(j, "keep_fraction", c.keep_fraction);
  read_optional(j, "hamming_threshold", c.hamming_threshold);
  read_optional(j, "examples_per_scene", c.examples_per_scene);
  read_optional(j, "eval_per_task", c.eval_per_task);
  read_optional(j, "plant_duplicates", c.plant_duplicates);
  read_optional(j, "mixture", c.mixture);
  c.scene_options.canvas = c.canvas;
}

void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = {{"id", r.id}, {"task", r.task}, {"scene_seed", r.scene_seed}, {"input_text", r.input_text}, {"gold", r.gold}};
}

void from_json(const nlohmann::json& j, EvalRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.scene_seed = j.at("scene_seed").get<std::uint64_t>();
  r.input_text = j.at("input_text").get<std::string>();
  r.gold = j.at("gold").get<std::vector<std::string>>();
}

nlohmann::json example_to_json(const Example& ex) {
  return {{"seed", ex.scene_seed},
          {"task", task_name(ex.task)},
          {"language", ex.language},
          {"input_text", ex.input_text},
          {"target_text", ex.target_text},
          {"image_ref", ex.blank_image ? std::string() : "images/" + std::to_string(ex.scene_seed) + ".ppm"}};
}

Example example_from_json(const nlohmann::json& j) {
  Example ex;
  ex.scene_seed = j.at("seed").get<std::uint64_t>();
  ex.task = parse_task(j.at("task").get<std::string>());
  ex.language = j.at("language").get<std::string>();
  ex.input_text = j.at("input_text").get<std::string>();
  ex.target_text = j.at("target_text").get<std::string>();
  ex.blank_image = j.at("image_ref").get<std::string>().empty();
  return ex;
}

const SceneSpec& Corpus::scene(std::uint64_t seed) const {
  const auto it = scenes.find(seed);
  if (it == scenes.end()) throw std::out_of_range("corpus has no scene with seed " + std::to_string(seed));
  return it->second;
}

TensorD Corpus::image_for(const Example& ex, int resolution) const {
  if (ex.blank_image) return TensorD(Shape{resolution, resolution, 3});
  return render_scene(scene(ex.scene_seed), resolution);
}

Corpus build_corpus(const CorpusConfig& config, int threads) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  SceneOptions options = config.scene_options;
  options.canvas = config.canvas;

  // Candidate scenes and their image/alt-text agreement.
  const auto n = static_cast<std::size_t>(config.num_scenes);
  std::vector<SceneSpec> candidates(n);
  std::vector<double> scores(n);
  std::vector<std::uint64_t> hashes(n);
  parallel_for(n, threads, [&](std::size_t i) {
    candidates[i] = generate_scene(mix_seed(config.seed, kCandidates, i), options);
    const auto image = render_scene(candidates[i], config.resolution);
    scores[i] = score_pair(image, alt_text(candidates[i]), candidates[i].language).score;
    hashes[i] = perceptual_hash(image);
  });
  const auto kept = quality_filter(scores, config.keep_fraction);

  // Held-out splits, rendered in English.
  SceneOptions eval_options = options;
  eval_options.languages = {"EN"};
  std::vector<SceneSpec> eval_scenes;
  auto& vqa = corpus.eval["vqa"];
  auto& caption = corpus.eval["caption"];
  auto& classify = corpus.eval["classify"];
  const auto per_task = static_cast<std::size_t>(config.eval_per_task);
  for (std::size_t i = 0; i < per_task; ++i) {
    const auto scene = generate_scene(mix_seed(config.seed, kEvalScenes, 3 * i), eval_options);
    std::mt19937_64 rng(mix_seed(config.seed, kEvalQuestions, i));
    const auto ex = gen_vqa(scene, rng);
    vqa.push_back({"vqa-" + std::to_string(i), "vqa", scene.seed, ex.input_text, {ex.target_text}});
    eval_scenes.push_back(scene);
  }
  for (std::size_t i = 0; i < per_task; ++i) {
    const auto scene = generate_scene(mix_seed(config.seed, kEvalScenes, 3 * i + 1), eval_options);
    const auto ex = gen_caption(alt_text(scene), scene.language);
    caption.push_back({"caption-" + std::to_string(i), "caption", scene.seed, ex.input_text, {ex.target_text}});
    eval_scenes.push_back(scene);
  }
  SceneOptions classify_options = eval_options;
  classify_options.min_objects = classify_options.max_objects = 1;
  classify_options.classes = classification_classes();
  for (std::size_t i = 0; i < per_task; ++i) {
    const auto scene = generate_scene(mix_seed(config.seed, kEvalScenes, 3 * i + 2), classify_options);
    classify.push_back({"classify-" + std::to_string(i), "classify", scene.seed, kZeroShotPrompt,
                        {scene.objects.front().class_name}});
    eval_scenes.push_back(scene);
  }
  const auto planted = std::min(kept.size(), static_cast<std::size_t>(config.plant_duplicates));
  for (std::size_t i = 0; i < planted; ++i) {
    const auto& scene = candidates[kept[i]];
    std::mt19937_64 rng(mix_seed(config.seed, kEvalQuestions, per_task + i));
    const auto ex = gen_vqa(scene, rng);
    vqa.push_back({"vqa-planted-" + std::to_string(i), "vqa", scene.seed, ex.input_text, {ex.target_text}});
    eval_scenes.push_back(scene);
  }
  std::vector<std::uint64_t> eval_hashes(eval_scenes.size());
  parallel_for(eval_scenes.size(), threads,
               [&](std::size_t i) { eval_hashes[i] = perceptual_hash(render_scene(eval_scenes[i], config.resolution)); });

  std::vector<std::uint64_t> kept_hashes;
  for (auto i : kept) kept_hashes.push_back(hashes[i]);
  const auto survivors = near_dedup(kept_hashes, eval_hashes, config.hamming_threshold);

  // Task examples per surviving scene.
  std::vector<std::vector<Example>> per_scene(survivors.size());
  parallel_for(survivors.size(), threads, [&](std::size_t s) {
    const auto& scene = candidates[kept[survivors[s]]];
    std::mt19937_64 rng(mix_seed(config.seed, kRecords, scene.seed));
    for (int e = 0; e < config.examples_per_scene; ++e) {
      const Task task = sample_mixture(config.mixture, rng);
      if (task == Task::ocr && scene.glyphs.empty()) continue;
      per_scene[s].push_back(make_example(task, scene, rng, config.resolution));
    }
  });
  for (std::size_t s = 0; s < survivors.size(); ++s) {
    const auto& scene = candidates[kept[survivors[s]]];
    corpus.scenes.emplace(scene.seed, scene);
    for (auto& ex : per_scene[s]) corpus.records.push_back(std::move(ex));
  }
  for (const auto& scene : eval_scenes) corpus.scenes.emplace(scene.seed, scene);

  nlohmann::json tasks = nlohmann::json::object(), languages = nlohmann::json::object(), eval = nlohmann::json::object();
  for (Task t : kAllTasks) tasks[std::string(task_name(t))] = 0;
  for (auto l : kLanguages) languages[std::string(l)] = 0;
  for (const auto& ex : corpus.records) {
    tasks[std::string(task_name(ex.task))] = tasks[std::string(task_name(ex.task))].get<int>() + 1;
    languages[ex.language] = languages[ex.language].get<int>() + 1;
  }
  for (const auto& [name, records] : corpus.eval) eval[name] = records.size();
  corpus.manifest = {{"config", config},
                     {"candidates", n},
                     {"filtered", kept.size()},
                     {"dedup_removed", kept.size() - survivors.size()},
                     {"scenes", survivors.size()},
                     {"records", corpus.records.size()},
                     {"tasks", tasks},
                     {"languages", languages},
                     {"eval", eval}};
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "eval");
  std::vector<nlohmann::json> lines;
  for (const auto& ex : corpus.records) lines.push_back(example_to_json(ex));
  write_lines(root / "corpus.jsonl", lines);
  lines.clear();
  for (const auto& [seed, scene] : corpus.scenes) {
    lines.push_back(scene);
    write_ppm((root / "images" / (std::to_string(seed) + ".ppm")).string(), render_scene(scene, corpus.config.resolution));
  }
  write_lines(root / "scenes.jsonl", lines);
  for (const auto& [task, records] : corpus.eval) {
    lines.clear();
    for (const auto& r : records) lines.push_back(r);
    write_lines(root / "eval" / (task + ".jsonl"), lines);
  }
  std::ofstream manifest(root / "manifest.json", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + (root / "manifest.json").string());
  manifest << corpus.manifest.dump(2) << '\n';
}

Corpus read_corpus(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw ArtifactError("corpus directory not found: " + dir);
  Corpus corpus;
  {
    std::ifstream in(root / "manifest.json");
    if (!in) throw ArtifactError("missing corpus file: " + (root / "manifest.json").string());
    corpus.manifest = nlohmann::json::parse(in);
  }
  corpus.config = corpus.manifest.at("config").get<CorpusConfig>();
  for (const auto& j : read_lines(root / "scenes.jsonl")) {
    auto scene = j.get<SceneSpec>();
    corpus.scenes.emplace(scene.seed, std::move(scene));
  }
  for (const auto& j : read_lines(root / "corpus.jsonl")) corpus.records.push_back(example_from_json(j));
  if (fs::is_directory(root / "eval")) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / "eval")) {
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto& records = corpus.eval[f.stem().string()];
      for (const auto& j : read_lines(f)) records.push_back(j.get<EvalRecord>());
    }
  }
  return corpus;
}

}  // namespace pali
