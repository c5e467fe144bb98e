#include "pali/cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "pali/eval/evaluate.hpp"
#include "pali/model/checkpoint.hpp"
#include "pali/training/soup.hpp"

namespace pali {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kEvalTasks = {"vqa", "caption", "classify"};

// Parses one config section, turning JSON type errors into ConfigError at `path`.
template <typename T>
void read_section(const nlohmann::json& j, const char* key, const std::string& path, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

void scale_phase(PhaseConfig& p, int divisor) {
  p.steps = std::max(1, p.steps / divisor);
  auto& s = p.schedule;
  s.warmup_steps /= divisor;
  if (s.kind == Schedule::Kind::linear_to_zero) {
    s.total_steps = std::max(p.steps, 2);
    s.warmup_steps = std::min(s.warmup_steps, s.total_steps - 1);
  }
}

DecodeMode decode_mode(const EvalSpec& e) { return e.beam == 1 ? DecodeMode::greedy() : DecodeMode::beam(e.beam); }

std::string decode_mode_name(const EvalSpec& e) { return e.beam == 1 ? "greedy" : "beam" + std::to_string(e.beam); }

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ArtifactError(std::string("no ") + what + " given");
  if (!fs::is_regular_file(path)) throw ArtifactError(std::string(what) + " not found: " + path);
}

void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ArtifactError(std::string("no ") + what + " given");
  if (!fs::is_directory(path)) throw ArtifactError(std::string(what) + " not found: " + path);
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

struct Flags {
  std::string command;
  std::string config;
  std::uint64_t seed = 0;
  int steps_divisor = 1;
  int resolution = 0;
  int beam = 1;
  std::string out;
  int threads = 1;
  std::string corpus;
  std::string checkpoint;
  std::vector<std::string> checkpoints;
  std::uint64_t scene = 0;
  std::string image;
  std::string prompt;
  std::vector<std::string> classes;
  std::vector<std::string> tasks;
};

struct Options {
  CLI::Option* seed = nullptr;
  CLI::Option* steps_divisor = nullptr;
  CLI::Option* resolution = nullptr;
  CLI::Option* beam = nullptr;
  CLI::Option* scene = nullptr;
  CLI::Option* image = nullptr;
  CLI::Option* prompt = nullptr;
  CLI::Option* classes = nullptr;
  CLI::Option* tasks = nullptr;
};

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

RunConfig effective_config(const Flags& f, const Options& o) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (given(o.seed)) {
    c.seed = f.seed;
    c.corpus.seed = f.seed;
  }
  if (given(o.steps_divisor)) {
    if (f.steps_divisor < 1) throw ConfigError("cli.steps_divisor", "must be at least 1");
    c.divide_steps(f.steps_divisor);
  }
  if (given(o.resolution)) (f.command == "pretrain" ? c.phase2.resolution : c.finetune.resolution) = f.resolution;
  if (given(o.beam)) c.eval.beam = f.beam;
  if (given(o.tasks)) c.eval.tasks = f.tasks;
  c.validate();
  return c;
}

fs::path prepare_out(const Flags& f, const RunConfig& c) {
  if (f.out.empty()) throw ConfigError("cli.out", "an output directory is required");
  if (f.threads < 1) throw ConfigError("cli.threads", "must be at least 1");
  fs::create_directories(f.out);
  write_json(fs::path(f.out) / "effective_config.json", c);
  return f.out;
}

RunOptions run_options(const RunConfig& c, const Flags& f) {
  RunOptions r;
  r.seed = c.seed;
  r.threads = f.threads;
  r.out_dir = f.out;
  return r;
}

TensorD input_image(const Flags& f, const Options& o, const ModelConfig& model) {
  const int res = model.vit.image_resolution;
  if (given(o.image)) {
    auto img = read_ppm(f.image);
    if (img.dim(0) != res || img.dim(1) != res) {
      throw ShapeError("image " + f.image + " is " + std::to_string(img.dim(0)) + "x" + std::to_string(img.dim(1)) +
                       ", the model expects " + std::to_string(res) + "x" + std::to_string(res));
    }
    return img;
  }
  return render_scene(generate_scene(f.scene), res);
}

int cmd_build_corpus(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  const auto dir = prepare_out(f, c);
  const auto corpus = build_corpus(c.corpus, f.threads);
  write_corpus(corpus, dir.string());
  out << "corpus: " << corpus.records.size() << " records, " << corpus.manifest.value("dedup_removed", 0)
      << " removed as near-duplicates -> " << dir.string() << '\n';
  return kExitOk;
}

int cmd_pretrain(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  require_dir(f.corpus, "corpus directory");
  const auto dir = prepare_out(f, c);
  const auto corpus = read_corpus(f.corpus);
  const auto result = run_pretraining(PaliModel<double>::init(c.model, c.seed), c.phase1, c.phase2, corpus, run_options(c, f));
  out << "pretrained " << result.phase2.step << " steps -> " << (dir / "phase2.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_finetune(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  require_file(f.checkpoint, "checkpoint");
  require_dir(f.corpus, "corpus directory");
  const auto dir = prepare_out(f, c);
  const auto start = load_checkpoint<double>(f.checkpoint);
  const auto corpus = read_corpus(f.corpus);
  const auto task = finetune_preset(c.finetune.preset).task;
  const auto dataset = finetune_dataset(corpus, task, c.finetune_examples, c.seed);
  finetune(start, dataset, corpus, c.finetune, run_options(c, f));
  out << "fine-tuned " << c.finetune.preset << " for " << c.finetune.resolved_steps() << " steps -> "
      << (dir / "finetune.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_soup(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  if (f.checkpoints.size() < 2) throw ConfigError("cli.checkpoints", "soup needs at least 2 checkpoints");
  for (const auto& p : f.checkpoints) require_file(p, "checkpoint");
  const auto dir = prepare_out(f, c);
  std::vector<Checkpoint<double>> inputs;
  for (const auto& p : f.checkpoints) inputs.push_back(load_checkpoint<double>(p));
  const nlohmann::json arch = inputs.front().config;
  std::vector<const ParamSet<double>*> sets;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (nlohmann::json(inputs[i].config) != arch) {
      throw std::invalid_argument("soup: " + f.checkpoints[i] + " has a different model config than " + f.checkpoints[0]);
    }
    sets.push_back(&inputs[i].params);
  }
  Checkpoint<double> souped;
  souped.config = inputs.front().config;
  souped.params = soup(sets);
  souped.step = inputs.front().step;
  souped.meta = {{"soup_of", f.checkpoints}};
  save_checkpoint((dir / "soup.ckpt").string(), souped);
  out << "souped " << inputs.size() << " checkpoints -> " << (dir / "soup.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_generate(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  require_file(f.checkpoint, "checkpoint");
  if (given(o.image)) require_file(f.image, "image");
  const auto dir = prepare_out(f, c);
  const auto ckpt = load_checkpoint<double>(f.checkpoint);
  const PaliModel<double> model{ckpt.config, ckpt.params};
  const auto tok = tokenizer_for(model.config);
  const auto prompt = given(o.prompt) ? f.prompt : caption_prompt("EN");
  const int max_len = model.config.encdec.max_text_len;
  const auto ids = generate(model, input_image(f, o, model.config), encode_prompt(tok, prompt, max_len), decode_mode(c.eval), max_len);
  const auto text = tok.decode(ids);
  write_json(dir / "generation.json",
             {{"prompt", prompt}, {"decode_mode", decode_mode_name(c.eval)}, {"tokens", ids}, {"text", text}});
  out << text << '\n';
  return kExitOk;
}

int cmd_classify(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  require_file(f.checkpoint, "checkpoint");
  if (given(o.image)) require_file(f.image, "image");
  const auto dir = prepare_out(f, c);
  const auto ckpt = load_checkpoint<double>(f.checkpoint);
  const PaliModel<double> model{ckpt.config, ckpt.params};
  const auto classes = given(o.classes) ? f.classes : classification_classes();
  const auto prompt = given(o.prompt) ? f.prompt : std::string(kZeroShotPrompt);
  const auto ranking = zero_shot_classify(model, tokenizer_for(model.config), input_image(f, o, model.config), classes, prompt);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : ranking) j.push_back({{"class", r.name}, {"log_prob", r.log_prob}});
  write_json(dir / "classification.json", {{"prompt", prompt}, {"ranking", j}});
  out << ranking.front().name << '\n';
  return kExitOk;
}

int cmd_evaluate(const Flags& f, const Options& o, std::ostream& out) {
  const auto c = effective_config(f, o);
  require_file(f.checkpoint, "checkpoint");
  require_dir(f.corpus, "corpus directory");
  const auto dir = prepare_out(f, c);
  const auto ckpt = load_checkpoint<double>(f.checkpoint);
  const PaliModel<double> model{ckpt.config, ckpt.params};
  const auto corpus = read_corpus(f.corpus);
  const ModelPredictor predictor(model, corpus, decode_mode(c.eval));
  EvalOptions eo;
  eo.decode_mode = decode_mode_name(c.eval);
  eo.seed = c.seed;
  eo.threads = f.threads;
  for (const auto& task : c.eval.tasks) {
    const auto it = corpus.eval.find(task);
    if (it == corpus.eval.end() || it->second.empty()) throw ArtifactError("corpus has no '" + task + "' eval split");
    const auto result = evaluate(predictor, it->second, eo);
    write_eval_result(result, dir.string());
    out << task << ' ' << result.metrics.at("metric_name").get<std::string>() << ' ' << result.metrics.at("value").dump()
        << '\n';
  }
  return kExitOk;
}

}  // namespace

void EvalSpec::validate(const std::string& path) const {
  if (tasks.empty()) throw ConfigError(path + ".tasks", "must list at least one task");
  for (const auto& t : tasks) {
    if (!kEvalTasks.count(t)) throw ConfigError(path + ".tasks", "unknown task '" + t + "' (known: vqa, caption, classify)");
  }
  if (beam < 1) throw ConfigError(path + ".beam", "must be at least 1");
}

FinetuneConfig RunConfig::default_finetune() {
  FinetuneConfig f;
  f.steps_divisor = 100;
  f.batch_size = 8;
  return f;
}

void RunConfig::validate() const {
  model.validate();
  corpus.validate("corpus");
  if (corpus.seed != seed) throw ConfigError("corpus.seed", "must equal the top-level seed");
  phase1.validate("pretrain.phase1");
  phase2.validate("pretrain.phase2");
  if (phase1.resolution != model.vit.image_resolution) {
    throw ConfigError("pretrain.phase1.resolution", "must equal model.vit.image_resolution " +
                                                        std::to_string(model.vit.image_resolution));
  }
  if (phase2.resolution < phase1.resolution) throw ConfigError("pretrain.phase2.resolution", "must not be below phase 1");
  if (phase2.resolution % model.vit.patch_size != 0) {
    throw ConfigError("pretrain.phase2.resolution", "must be divisible by patch_size " + std::to_string(model.vit.patch_size));
  }
  finetune.validate("finetune");
  if (finetune.resolution % model.vit.patch_size != 0) {
    throw ConfigError("finetune.resolution", "must be divisible by patch_size " + std::to_string(model.vit.patch_size));
  }
  if (finetune_examples < 1) throw ConfigError("finetune.examples", "must be positive");
  eval.validate("eval");
}

void RunConfig::divide_steps(int divisor) {
  if (divisor < 1) throw ConfigError("cli.steps_divisor", "must be at least 1");
  scale_phase(phase1, divisor);
  scale_phase(phase2, divisor);
  finetune.steps = std::max(1, finetune.resolved_steps() / divisor);
  finetune.warmup_steps = std::min(finetune.warmup_steps / divisor, *finetune.steps - 1);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json model = c.model;
  model["preset"] = c.model_preset;
  nlohmann::json ft = c.finetune;
  ft["examples"] = c.finetune_examples;
  j = {{"seed", c.seed},
       {"model", model},
       {"corpus", c.corpus},
       {"pretrain", {{"phase1", c.phase1}, {"phase2", c.phase2}}},
       {"finetune", ft},
       {"eval", {{"tasks", c.eval.tasks}, {"beam", c.eval.beam}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    static const std::set<std::string> known = {"seed", "model", "corpus", "pretrain", "finetune", "eval"};
    if (!known.count(key)) throw ConfigError(key, "unknown field");
  }
  read_section(j, "seed", "seed", c.seed);
  c.corpus.seed = c.seed;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    read_section(m, "preset", "model.preset", c.model_preset);
    c.model = ModelConfig::preset(c.model_preset);
    read_section(m, "vit", "model.vit", c.model.vit);
    read_section(m, "encdec", "model.encdec", c.model.encdec);
  }
  read_section(j, "corpus", "corpus", c.corpus);
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    read_section(p, "phase1", "pretrain.phase1", c.phase1);
    read_section(p, "phase2", "pretrain.phase2", c.phase2);
  }
  read_section(j, "finetune", "finetune", c.finetune);
  if (j.contains("finetune")) read_section(j.at("finetune"), "examples", "finetune.examples", c.finetune_examples);
  if (j.contains("eval")) {
    read_section(j.at("eval"), "tasks", "eval.tasks", c.eval.tasks);
    read_section(j.at("eval"), "beam", "eval.beam", c.eval.beam);
  }
}

RunConfig load_run_config(const std::string& path) {
  require_file(path, "config file");
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale image-language model pipeline", "pali"};
  app.require_subcommand(1);
  Flags f;
  Options o;
  std::function<int(const Flags&, const Options&, std::ostream&)> handler;

  auto command = [&](const char* name, const char* help, auto fn) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "JSON run config (defaults apply to missing fields)");
    sub->add_option("--seed", f.seed, "seed for every random stream");
    sub->add_option("--out", f.out, "output directory")->required();
    sub->add_option("--threads", f.threads, "worker threads; 1 is bit-reproducible");
    sub->callback([&, fn, name] {
      f.command = name;
      handler = fn;
    });
    return sub;
  };
  // Flags registered per subcommand; `o` records the parsed one's options.
  std::map<CLI::App*, Options> registered;
  auto track = [&](CLI::App* sub, auto&&... setters) {
    Options opts;
    opts.seed = sub->get_option("--seed");
    (setters(sub, opts), ...);
    registered[sub] = opts;
  };
  auto corpus = [&](CLI::App* s, Options&) { s->add_option("--corpus", f.corpus, "corpus directory"); };
  auto checkpoint = [&](CLI::App* s, Options&) { s->add_option("--checkpoint", f.checkpoint, "input checkpoint"); };
  auto steps = [&](CLI::App* s, Options& opts) {
    opts.steps_divisor = s->add_option("--steps-divisor", f.steps_divisor, "divide all step counts");
  };
  auto resolution = [&](CLI::App* s, Options& opts) {
    opts.resolution = s->add_option("--resolution", f.resolution, "training resolution (phase 2 / fine-tuning)");
  };
  auto beam = [&](CLI::App* s, Options& opts) { opts.beam = s->add_option("--beam", f.beam, "beam width; 1 is greedy"); };
  auto image = [&](CLI::App* s, Options& opts) {
    opts.scene = s->add_option("--scene", f.scene, "render the scene with this seed (default 0)");
    opts.image = s->add_option("--image", f.image, "binary PPM at the model resolution");
    opts.image->excludes(opts.scene);
    opts.prompt = s->add_option("--prompt", f.prompt, "prompt text");
  };

  track(command("build-corpus", "generate, filter and deduplicate the synthetic corpus", cmd_build_corpus));
  track(command("pretrain", "two-phase pre-training from a fresh model", cmd_pretrain), corpus, steps, resolution);
  track(command("finetune", "fine-tune a checkpoint with a task preset", cmd_finetune), corpus, checkpoint, steps,
        resolution);
  track(command("soup", "average checkpoints parameter-wise", cmd_soup), [&](CLI::App* s, Options&) {
    s->add_option("--checkpoints", f.checkpoints, "input checkpoints")->expected(2, -1);
  });
  track(command("generate", "decode text for one image", cmd_generate), checkpoint, beam, image);
  track(command("classify", "zero-shot classification of one image", cmd_classify), checkpoint, image,
        [&](CLI::App* s, Options& opts) {
          opts.classes = s->add_option("--classes", f.classes, "class names")->delimiter(',');
        });
  track(command("evaluate", "score a checkpoint on the corpus eval splits", cmd_evaluate), checkpoint, corpus, beam,
        [&](CLI::App* s, Options& opts) {
          opts.tasks = s->add_option("--tasks", f.tasks, "eval tasks (vqa, caption, classify)")->delimiter(',');
        });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error[config] cli: " << one_line(e.what()) << '\n';
    return kExitConfig;
  }

  try {
    o = registered.at(app.get_subcommands().front());
    return handler(f, o, out);
  } catch (const ConfigError& e) {
    err << "error[config] " << one_line(e.what()) << '\n';
    return kExitConfig;
  } catch (const ArtifactError& e) {
    err << "error[artifact] " << one_line(e.what()) << '\n';
    return kExitMissingArtifact;
  } catch (const NumericError& e) {
    err << "error[numeric] " << one_line(e.what()) << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error[runtime] " << one_line(e.what()) << '\n';
    return kExitRuntime;
  }
}

}  // namespace pali
