// Runs every acceptance criterion at its stated tolerance and budget and
// prints one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pali/cli/cli.hpp"
#include "pali/eval/evaluate.hpp"
#include "pali/eval/metrics.hpp"
#include "pali/model/model.hpp"
#include "pali/numerics/grad_check.hpp"
#include "pali/numerics/resize.hpp"
#include "pali/tasks/filter.hpp"
#include "pali/tasks/generators.hpp"
#include "pali/tasks/mixture.hpp"
#include "pali/training/finetune.hpp"
#include "pali/training/soup.hpp"
#include "pali/training/trainer.hpp"
#include "toy_models.hpp"

using namespace pali;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

bool params_bit_equal(const ParamSet<double>& a, const ParamSet<double>& b, const std::string& prefix = "") {
  for (const auto& [name, p] : a) {
    if (name.starts_with(prefix) && !p.value.bit_equal(b.value(name))) return false;
  }
  return true;
}

const Corpus& small_corpus() {
  static const Corpus corpus = [] {
    CorpusConfig cfg;
    cfg.seed = 2024;
    cfg.num_scenes = 400;
    cfg.eval_per_task = 8;
    return build_corpus(cfg);
  }();
  return corpus;
}

std::string long_text(std::mt19937_64& rng, std::size_t words) {
  std::string out;
  while (out.empty() || split_words(out).size() < words) out += (out.empty() ? "" : " ") + alt_text(generate_scene(rng()));
  return out;
}

Outcome gradient_fidelity() {
  const auto config = ModelConfig::preset("toy-512");
  if (config.vit.width != 64 || config.vit.depth != 2 || config.encdec.d_model != 64 || config.encdec.enc_layers != 2 ||
      config.encdec.dec_layers != 2 || config.encdec.vocab_size != 512) {
    return {false, "toy-512 preset does not have the required shape"};
  }
  const auto model = PaliModel<double>::init(config, 1);
  const auto image = pali::testing::random_image(config.vit.image_resolution, 1);
  const std::vector<int> text{40, 41, 300, kPadId, 77}, targets{12, 200, 511, kEosId};
  auto loss_of = [&](Graph<double>& g) { return PaliGraph<double>(g, config).loss(image, text, targets); };
  Tape<double> tape;
  Graph<double> graph(tape, model.params);
  const auto grads = backward(loss_of(graph));

  // one coordinate in every tensor, the rest drawn uniformly over tensors
  std::mt19937_64 rng(1);
  std::vector<Coordinate> coords;
  const auto names = model.params.names();
  auto draw = [&](const std::string& name) {
    coords.push_back({name, static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(model.params.value(name).size())))});
  };
  for (const auto& name : names) draw(name);
  while (coords.size() < 240) draw(names[uniform_index(rng, names.size())]);

  ScalarObjective<double> f = [&](const ParamSet<double>& p) {
    Tape<double> t;
    Graph<double> g(t, p);
    return loss_of(g).value().item();
  };
  const auto fd = finite_difference_grad(f, model.params, coords, 1e-5);
  double worst = 0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    worst = std::max(worst, relative_error(grads.at(coords[i].name)[coords[i].index], fd[i], 1e-4));
  }
  return {worst < 1e-5, "max relative error " + fmt(worst) + " over " + std::to_string(coords.size()) + " coordinates in " +
                            std::to_string(names.size()) + " tensors"};
}

Outcome freezing_invariant() {
  const auto config = ModelConfig::preset("toy");
  auto model = PaliModel<double>::init(config, 2);
  const auto init = model.params;
  auto phase = PhaseConfig::frozen_vision(config.vit.image_resolution, 100, 8);
  TrainState state;
  ImageCache images(small_corpus());
  BatchSampler sampler(small_corpus(), phase.mixture, 2, phase.resolution);
  run_phase(model, phase, [&] { return sampler.next(); }, images, state, {});
  std::size_t vit = 0, vit_same = 0, encdec_changed = 0;
  for (const auto& [name, p] : model.params) {
    const bool same = p.value.bit_equal(init.value(name));
    if (name.starts_with("vit.")) {
      ++vit;
      vit_same += same;
    }
    if (name.starts_with("encdec.") && !same) ++encdec_changed;
  }
  return {state.step == 100 && vit > 0 && vit_same == vit && encdec_changed > 0,
          std::to_string(vit_same) + "/" + std::to_string(vit) + " vit tensors byte-identical, " +
              std::to_string(encdec_changed) + " encdec tensors changed after " + std::to_string(state.step) + " steps"};
}

Outcome mixture_fidelity() {
  const auto mix = MixtureSpec::pretraining();
  const std::map<Task, double> expected = {{Task::span, 100},   {Task::split_cap, 1000}, {Task::ocr, 100}, {Task::cap, 100},
                                           {Task::vqa, 100},    {Task::vqg, 100},        {Task::oa, 50},   {Task::det, 16}};
  std::mt19937_64 rng(3);
  std::array<long, 8> counts{};
  const long draws = 1566000;
  for (long i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_mixture(mix, rng))];
  double worst = 0;
  for (const auto& [task, weight] : expected) {
    worst = std::max(worst, std::abs(static_cast<double>(counts[static_cast<std::size_t>(task)]) / draws - weight / 1566.0));
  }
  return {worst <= 0.005, "max |freq - weight/1566| = " + fmt(worst) + " over " + std::to_string(draws) + " draws"};
}

Outcome positional_resize() {
  const auto model = PaliModel<double>::init(ModelConfig::preset("toy"), 4);
  const bool same = params_bit_equal(resize_positional_embeddings(model, 56).params, model.params);
  const auto& before = model.params.value("vit.pos");
  const auto resized = resize_positional_embeddings(model, 112);
  const auto& after = resized.params.value("vit.pos");
  bool corners = before.dim(0) == 4 && after.dim(0) == 8 && after.dim(1) == 8;
  for (auto [r0, c0, r1, c1] : {std::array<Index, 4>{0, 0, 0, 0}, {0, 3, 0, 7}, {3, 0, 7, 0}, {3, 3, 7, 7}}) {
    for (Index d = 0; corners && d < before.dim(2); ++d) corners = before.at({r0, c0, d}) == after.at({r1, c1, d});
  }
  const TensorD grid(Shape{2, 2, 1}, {0, 1, 2, 3});
  const TensorD hand(Shape{3, 3, 1}, {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3});
  const bool small = bilinear_resize_grid(grid, 3, 3).bit_equal(hand);
  return {same && corners && small, std::string("same-size ") + (same ? "bit-identical" : "DIFFERS") + ", 4x4->8x8 corners " +
                                        (corners ? "exact" : "WRONG") + ", 2x2->3x3 " + (small ? "matches" : "MISMATCH")};
}

Outcome souping_algebra() {
  const auto x = PaliModel<double>::init(ModelConfig::preset("toy"), 5).params;
  const auto y = PaliModel<double>::init(ModelConfig::preset("toy"), 6).params;
  const bool idempotent = params_bit_equal(soup(x, x), x);
  const bool commutative = params_bit_equal(soup(x, y), soup(y, x));
  ParamSet<double> zero, two;
  for (const auto& [name, p] : x) {
    zero.add(name, TensorD::constant(p.value.shape(), 0.0));
    two.add(name, TensorD::constant(p.value.shape(), 2.0));
  }
  bool ones = true;
  for (const auto& [name, p] : soup(zero, two)) ones = ones && (p.value.vec().array() == 1.0).all();
  return {idempotent && commutative && ones, std::string("soup(x,x)=x ") + (idempotent ? "yes" : "NO") + ", commutative " +
                                                 (commutative ? "yes" : "NO") + ", soup{0,2}=1 " + (ones ? "yes" : "NO")};
}

Outcome overfit_smoke() {
  const auto config = ModelConfig::preset("toy");
  const int res = config.vit.image_resolution;
  const auto tok = tokenizer_for(config);
  ImageCache images(small_corpus());
  BatchSampler sampler(small_corpus(), MixtureSpec::pretraining(), 6, res);
  // 128 examples with distinct (image, prompt) pairs so every target is learnable
  std::vector<TrainItem> items;
  std::set<Task> tasks;
  std::set<std::tuple<std::uint64_t, bool, std::string>> seen;
  while (items.size() < 128) {
    const auto ex = sampler.next();
    if (!seen.insert({ex.scene_seed, ex.blank_image, ex.input_text}).second) continue;
    tasks.insert(ex.task);
    items.push_back(make_train_item(tok, ex, images.get(ex, res), config.encdec.max_text_len));
  }
  auto model = PaliModel<double>::init(config, 6);
  PhaseConfig phase;
  phase.name = "overfit";
  phase.resolution = res;
  phase.batch_size = 16;
  phase.steps = 2000;
  phase.schedule = Schedule::inv_sqrt(1e-2, 100);
  TrainState state;
  std::mt19937_64 rng(6);
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double acc = 0;
  std::size_t pos = order.size();
  while (state.step < phase.steps) {
    std::vector<TrainItem> batch;
    while (batch.size() < static_cast<std::size_t>(phase.batch_size)) {
      if (pos == order.size()) {
        shuffle_in_place(order, rng);
        pos = 0;
      }
      batch.push_back(items[order[pos++]]);
    }
    train_step(model, batch, phase, state);
    if (state.step % 50 == 0) {
      acc = teacher_forced_accuracy(model, items);
      if (acc >= 0.99) break;
    }
  }
  return {acc >= 0.99, "teacher-forced token accuracy " + fmt(acc, 4) + " after " + std::to_string(state.step) + " steps on " +
                           std::to_string(items.size()) + " examples from " + std::to_string(tasks.size()) + " tasks"};
}

Outcome generation_correctness() {
  int beam_matches = 0, greedy_checks = 0, greedy_matches = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto model = PaliModel<double>::init(pali::testing::tiny_config(4), 700 + seed);
    const DecoderSession<double> session(model, pali::testing::random_image(56, seed), {2, 3});
    std::vector<int> best{kEosId};
    double best_score = session.next_log_probs({})[kEosId];
    for (int a = 0; a < 4; ++a) {
      if (a == kEosId) continue;
      for (int b = 0; b < 4; ++b) {
        const double s = sequence_log_prob(session, {a, b});
        if (s > best_score) {
          best_score = s;
          best = {a, b};
        }
      }
    }
    beam_matches += generate(session, DecodeMode::beam(16), 2) == best;
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (int vocab : {4, 16, 64}) {
      const auto model = PaliModel<double>::init(pali::testing::tiny_config(vocab), 800 + seed);
      const DecoderSession<double> session(model, pali::testing::random_image(56, 50 + seed), {2, 3});
      for (int max_len : {1, 2, 5, 8}) {
        ++greedy_checks;
        greedy_matches += generate(session, DecodeMode::beam(1), max_len) == generate(session, DecodeMode::greedy(), max_len);
      }
    }
  }
  return {beam_matches == 10 && greedy_matches == greedy_checks,
          "beam(16)=exhaustive argmax on " + std::to_string(beam_matches) + "/10 models; beam(1)=greedy on " +
              std::to_string(greedy_matches) + "/" + std::to_string(greedy_checks) + " cases"};
}

Outcome scoring_normalization() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto model = PaliModel<double>::init(pali::testing::tiny_config(4), 900 + seed);
    const DecoderSession<double> session(model, pali::testing::random_image(56, seed), {3});
    // complete candidates of length <= 2 plus the mass of unfinished length-2 prefixes
    double total = std::exp(score_candidate(session, {kEosId}));
    for (int a = 0; a < 4; ++a) {
      if (a == kEosId) continue;
      total += std::exp(score_candidate(session, {a, kEosId}));
      for (int b = 0; b < 4; ++b) {
        if (b != kEosId) total += std::exp(sequence_log_prob(session, {a, b}));
      }
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return {worst <= 1e-9, "max |sum exp(score) - 1| = " + fmt(worst) + " over 10 models"};
}

Outcome span_corruption() {
  std::mt19937_64 rng(9);
  double lo = 1, hi = 0;
  int exact = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto text = long_text(rng, 40 + uniform_index(rng, 40));
    const auto ex = gen_span_corruption(text, rng, 0.15);
    std::size_t noise = 0;
    for (const auto& w : split_words(ex.target_text)) noise += !w.starts_with("<extra_id_");
    const double fraction = static_cast<double>(noise) / static_cast<double>(split_words(text).size());
    lo = std::min(lo, fraction);
    hi = std::max(hi, fraction);
    exact += splice_spans(ex.input_text, ex.target_text) == text;
  }
  return {lo >= 0.075 && hi <= 0.225 && exact == 1000,
          "corruption fraction in [" + fmt(lo) + ", " + fmt(hi) + "], " + std::to_string(exact) + "/1000 exact splices"};
}

Outcome detection_round_trip() {
  std::mt19937_64 rng(10);
  double worst_steps = 0;
  int out_of_range = 0, boxes = 0;
  for (int res : {112, 224}) {
    for (int i = 0; i < 1000; ++i, ++boxes) {
      std::array<double, 4> px{};
      for (auto& p : px) p = uniform_real(rng) * res;
      std::array<int, 4> q{};
      for (std::size_t k = 0; k < 4; ++k) q[k] = quantize_coord(px[k], res);
      const auto parsed = parse_detection(format_detection({{q, "kite"}}));
      for (std::size_t k = 0; k < 4; ++k) {
        const int c = parsed.at(0).coords[k];
        out_of_range += c < 0 || c > 999;
        worst_steps = std::max(worst_steps, std::abs(dequantize_coord(c, res) - px[k]) / (res / 1000.0));
      }
    }
  }
  return {worst_steps <= 1.0 + 1e-9 && out_of_range == 0,
          std::to_string(boxes) + " boxes: max error " + fmt(worst_steps) + " quantization steps, " +
              std::to_string(out_of_range) + " coords outside [0,999]"};
}

Outcome filtering_dedup() {
  std::mt19937_64 rng(11);
  int bad_counts = 0;
  for (std::size_t n : {1u, 9u, 10u, 11u, 99u, 1000u, 1566u}) {
    std::vector<double> scores(n);
    for (auto& s : scores) s = uniform_real(rng);
    bad_counts += quality_filter(scores, 0.1).size() != static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n)));
  }
  std::vector<std::uint64_t> corpus;
  for (std::uint64_t s = 0; s < 200; ++s) corpus.push_back(perceptual_hash(render_scene(generate_scene(s), 56)));
  // planted copies: each corpus hash with 0..4 flipped bits, plus image-level edits
  std::vector<std::uint64_t> planted;
  std::set<std::size_t> targets;
  for (std::size_t i = 0; i < 50; ++i) {
    const std::size_t victim = i * 4;
    auto h = corpus[victim];
    const int flips = static_cast<int>(i % 5);
    std::set<int> bits;
    while (static_cast<int>(bits.size()) < flips) bits.insert(static_cast<int>(uniform_index(rng, 64)));
    for (int b : bits) h ^= std::uint64_t{1} << b;
    planted.push_back(h);
    targets.insert(victim);
  }
  for (std::uint64_t s : {1u, 5u, 13u}) {
    auto img = render_scene(generate_scene(s), 56);
    for (Index y = 0; y < 7; ++y)
      for (Index x = 0; x < 7; ++x)
        for (Index c = 0; c < 3; ++c) img.at({y, x, c}) = 0.0;
    if (hamming_distance(perceptual_hash(img), corpus[s]) > 4) continue;
    planted.push_back(perceptual_hash(img));
    targets.insert(s);
  }
  std::set<std::size_t> removed;
  {
    const auto kept = near_dedup(corpus, planted, 4);
    std::set<std::size_t> k(kept.begin(), kept.end());
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (!k.count(i)) removed.insert(i);
  }
  std::size_t caught = 0;
  for (auto t : targets) caught += removed.count(t);
  std::vector<std::uint64_t> disjoint;
  for (int k = 0; k < 4; ++k) {
    TensorD img(Shape{56, 56, 3});
    for (Index y = 0; y < 56; ++y)
      for (Index x = 0; x < 56; ++x)
        for (Index c = 0; c < 3; ++c) img.at({y, x, c}) = ((y / 14 + x / 14 + k) % 2) ? 1.0 : 0.0;
    disjoint.push_back(perceptual_hash(img));
  }
  const auto untouched = near_dedup(corpus, disjoint, 4).size();
  return {bad_counts == 0 && caught == targets.size() && untouched == corpus.size(),
          "ceil(0.1N) kept in " + std::to_string(7 - bad_counts) + "/7 sizes; " + std::to_string(caught) + "/" +
              std::to_string(targets.size()) + " planted duplicates removed; " +
              std::to_string(corpus.size() - untouched) + " removals on disjoint corpus"};
}

Outcome cider_oracle() {
  const std::vector<std::vector<std::string>> refs{{"photo of cube in red"}, {"kite near blue ring today"}};
  const auto exact = cider_score({"photo of cube in red", "kite near blue ring today"}, refs);
  const auto zero = cider_score({"zebra zone", "kite near blue ring today"}, refs);
  return {exact.score == 10.0 && zero.per_candidate[0] == 0.0,
          "2-document oracle " + fmt(exact.score, 17) + " (reported " + fmt(exact.reported) + "), zero overlap " +
              fmt(zero.per_candidate[0])};
}

Outcome zero_shot_protocol() {
  const auto config = ModelConfig::preset("toy");
  const int res = config.vit.image_resolution;
  SceneOptions single;
  single.min_objects = single.max_objects = 1;
  single.classes = classification_classes();
  single.languages = {"EN"};
  // caption fine-tuning in the zero-shot prompt format: "Photo of" is given,
  // the model continues with "<class> in <color>"
  Corpus corpus;
  std::vector<Example> train;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto scene = generate_scene(1000000 + i, single);
    corpus.scenes.emplace(scene.seed, scene);
    const auto words = split_words(english_caption(scene));
    Example ex;
    ex.task = Task::cap;
    ex.input_text = kZeroShotPrompt;
    ex.target_text = join_words(words, 2);
    ex.scene_seed = scene.seed;
    train.push_back(ex);
  }
  std::vector<SceneSpec> held_out;
  for (std::uint64_t i = 0; i < 200; ++i) held_out.push_back(generate_scene(2000000 + i, single));

  Checkpoint<double> start;
  const auto init = PaliModel<double>::init(config, 13);
  start.config = init.config;
  start.params = init.params;
  FinetuneConfig ft;
  ft.preset = "coco-like";
  ft.steps = 3000;
  ft.peak_lr = 1e-3;
  ft.warmup_steps = 100;
  ft.batch_size = 16;
  ft.dropout_rate = 0.0;
  const auto tuned = finetune(start, train, corpus, ft);
  const PaliModel<double> model{tuned.config, tuned.params};
  const auto tok = tokenizer_for(model.config);

  int correct = 0, invariant = 0;
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const auto image = render_scene(held_out[i], res);
    const auto ranking = zero_shot_classify(model, tok, image, classification_classes());
    correct += ranking.front().name == held_out[i].objects.front().class_name;
    ForwardOptions<double> shifted;
    shifted.logit_shift = 17.0;
    shifted.step_logit_shifts = {-250.0 + static_cast<double>(i), 3.5, 1e3};
    const auto moved = zero_shot_classify(model, tok, image, classification_classes(), kZeroShotPrompt, shifted);
    bool same = moved.size() == ranking.size();
    for (std::size_t k = 0; same && k < ranking.size(); ++k) same = moved[k].name == ranking[k].name;
    invariant += same;
  }
  const double top1 = static_cast<double>(correct) / static_cast<double>(held_out.size());
  return {top1 >= 0.30 && invariant == static_cast<int>(held_out.size()),
          "top-1 " + fmt(top1) + " on " + std::to_string(held_out.size()) + " held-out scenes (chance 0.125); ranking unchanged under shifts on " +
              std::to_string(invariant) + "/" + std::to_string(held_out.size())};
}

std::map<std::string, std::string> run_pipeline(const fs::path& root) {
  fs::remove_all(root);
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) {
    args.insert(args.end(), {"--seed", "14", "--threads", "1"});
    if (run_cli(args, sink, sink) != 0) throw std::runtime_error("pipeline step failed: " + args.front() + ": " + sink.str());
  };
  const auto p = [&](const char* name) { return (root / name).string(); };
  cli({"build-corpus", "--out", p("corpus")});
  cli({"pretrain", "--corpus", p("corpus"), "--steps-divisor", "10", "--out", p("pretrain")});
  cli({"finetune", "--checkpoint", p("pretrain/phase2.ckpt"), "--corpus", p("corpus"), "--steps-divisor", "10", "--out",
       p("finetune")});
  cli({"evaluate", "--checkpoint", p("finetune/finetune.ckpt"), "--corpus", p("corpus"), "--out", p("eval")});
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (!e.is_regular_file() || !(name.starts_with("metrics") || name == "manifest.json")) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

Outcome end_to_end_determinism() {
  const auto base = fs::temp_directory_path() / "pali_acceptance_pipeline";
  const auto a = run_pipeline(base / "run_a");
  const auto b = run_pipeline(base / "run_b");
  std::size_t identical = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    identical += it != b.end() && it->second == bytes;
  }
  const bool has_eval = a.count("eval/metrics_vqa.json") && a.count("eval/metrics_caption.json") && a.count("eval/metrics_classify.json");
  fs::remove_all(base);
  return {has_eval && a.size() == b.size() && identical == a.size(),
          std::to_string(identical) + "/" + std::to_string(a.size()) + " metrics files byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", 120, gradient_fidelity},
      {2, "freezing invariant", 60, freezing_invariant},
      {3, "mixture fidelity", 60, mixture_fidelity},
      {4, "positional resize", 1, positional_resize},
      {5, "souping algebra", 1, souping_algebra},
      {6, "overfit smoke test", 600, overfit_smoke},
      {7, "generation correctness", 60, generation_correctness},
      {8, "scoring normalization", 60, scoring_normalization},
      {9, "span corruption", 60, span_corruption},
      {10, "detection round-trip", 1, detection_round_trip},
      {11, "filtering/dedup", 60, filtering_dedup},
      {12, "CIDEr oracle", 1, cider_oracle},
      {13, "zero-shot protocol", 900, zero_shot_protocol},
      {14, "end-to-end determinism", 1800, end_to_end_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = seconds <= c.budget_seconds;
    const bool pass = outcome.pass && in_budget;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << outcome.detail << " ("
              << fmt(seconds) << " s of " << c.budget_seconds << " s" << (in_budget ? "" : ", OVER BUDGET") << ")"
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
