#include "pali/tasks/generators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "pali/tasks/tokenizer.hpp"

namespace pali {

namespace {

constexpr std::string_view kSlot = "<extra_id_0>";

bool is_sentinel_word(std::string_view w) {
  constexpr std::string_view prefix = "<extra_id_";
  if (w.size() <= prefix.size() + 1 || !w.starts_with(prefix) || w.back() != '>') return false;
  const auto digits = w.substr(prefix.size(), w.size() - prefix.size() - 1);
  return std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Splits m items into k non-empty runs with uniformly chosen cut points.
std::vector<std::size_t> random_partition(std::size_t m, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> cuts(m - 1);
  for (std::size_t i = 0; i < cuts.size(); ++i) cuts[i] = i + 1;
  for (std::size_t i = 0; i + 1 < k; ++i) std::swap(cuts[i], cuts[i + uniform_index(rng, cuts.size() - i)]);
  cuts.resize(k - 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> lengths;
  std::size_t prev = 0;
  for (auto c : cuts) {
    lengths.push_back(c - prev);
    prev = c;
  }
  lengths.push_back(m - prev);
  return lengths;
}

std::vector<std::string> present_classes(const SceneSpec& scene) {
  std::vector<std::string> out;
  for (auto c : kPalette) {
    if (std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) { return o.class_name == c; }))
      out.emplace_back(c);
  }
  return out;
}

std::vector<std::string> absent_classes(const SceneSpec& scene) {
  const auto present = present_classes(scene);
  std::vector<std::string> out;
  for (auto c : kPalette) {
    if (std::find(present.begin(), present.end(), c) == present.end()) out.emplace_back(c);
  }
  return out;
}

bool is_present(const SceneSpec& scene, std::string_view cls) {
  return std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) { return o.class_name == cls; });
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

std::vector<std::string> split_on(std::string_view text, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto end = text.find(sep, start);
    out.emplace_back(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + sep.size();
  }
  return out;
}

// Strips `prefix` and `suffix`, returning the middle, or nullopt.
std::optional<std::string> between(std::string_view text, std::string_view prefix, std::string_view suffix) {
  if (text.size() < prefix.size() + suffix.size() || !text.starts_with(prefix) || !text.ends_with(suffix)) {
    return std::nullopt;
  }
  return std::string(text.substr(prefix.size(), text.size() - prefix.size() - suffix.size()));
}

std::string canonical_subset(const SceneSpec& scene, const std::vector<std::string>& candidates) {
  std::vector<std::string> hits;
  for (auto c : kPalette) {
    if (std::find(candidates.begin(), candidates.end(), c) != candidates.end() && is_present(scene, c)) hits.emplace_back(c);
  }
  return hits.empty() ? "None" : join(hits, ", ");
}

Example text_example(Task task, std::string input, std::string target, const SceneSpec& scene) {
  Example ex;
  ex.task = task;
  ex.language = scene.language;
  ex.input_text = std::move(input);
  ex.target_text = std::move(target);
  ex.scene_seed = scene.seed;
  return ex;
}

std::pair<std::string, std::string> sample_qa(const SceneSpec& scene, std::mt19937_64& rng) {
  if (scene.objects.empty()) throw std::invalid_argument("question generation needs a non-empty scene");
  std::vector<std::string> unique;
  for (const auto& cls : present_classes(scene)) {
    const auto n = std::count_if(scene.objects.begin(), scene.objects.end(),
                                 [&](const SceneObject& o) { return o.class_name == cls; });
    if (n == 1) unique.push_back(cls);
  }
  if (!unique.empty() && uniform_index(rng, 2) == 0) {
    const auto& cls = unique[uniform_index(rng, unique.size())];
    const auto q = color_question(cls);
    return {q, *answer_question(scene, q)};
  }
  const auto present = present_classes(scene);
  std::string cls = uniform_index(rng, 4) == 0 ? std::string(kPalette[uniform_index(rng, kPalette.size())])
                                               : present[uniform_index(rng, present.size())];
  const auto q = count_question(cls);
  return {q, *answer_question(scene, q)};
}

std::vector<DetectedBox> expected_boxes(const SceneSpec& scene, int resolution) {
  std::vector<SceneObject> objects = scene.objects;
  std::stable_sort(objects.begin(), objects.end(), [](const SceneObject& a, const SceneObject& b) {
    return std::tie(a.box.ymin, a.box.xmin) < std::tie(b.box.ymin, b.box.xmin);
  });
  const double scale = static_cast<double>(resolution) / scene.canvas;
  std::vector<DetectedBox> out;
  for (const auto& o : objects) {
    const auto q = [&](double v) { return quantize_coord(v * scale, resolution); };
    out.push_back({{q(o.box.ymin), q(o.box.xmin), q(o.box.ymax), q(o.box.xmax)}, o.class_name});
  }
  return out;
}

std::optional<std::string> oa_answer(const SceneSpec& scene, const std::string& input) {
  if (input == "Answer in EN: List the objects present: <extra_id_0>") return canonical_subset(scene, present_classes(scene));
  if (auto which = between(input, "Answer in EN: Which of ", " are in the image? <extra_id_0>")) {
    return canonical_subset(scene, split_on(*which, ", "));
  }
  if (auto is = between(input, "Answer in EN: Is ", " in the image? <extra_id_0>")) {
    const auto items = split_on(*is, ", ");
    for (const auto& c : items) {
      if (class_index(c) < 0) return std::nullopt;
    }
    const bool all = std::all_of(items.begin(), items.end(), [&](const std::string& c) { return is_present(scene, c); });
    return std::string(all ? "Yes" : "No");
  }
  return std::nullopt;
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::span: return "span";
    case Task::split_cap: return "split_cap";
    case Task::cap: return "cap";
    case Task::ocr: return "ocr";
    case Task::vqa: return "vqa";
    case Task::vqg: return "vqg";
    case Task::oa: return "oa";
    case Task::det: return "det";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  for (Task t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (known: span, split_cap, cap, ocr, vqa, vqg, oa, det)");
}

Example gen_span_corruption(const std::string& text, std::mt19937_64& rng, double rate, double mean_span,
                            int max_sentinels) {
  const auto words = split_words(text);
  const std::size_t n = words.size();
  if (n < 2) throw std::invalid_argument("span corruption needs at least 2 words, got " + std::to_string(n));
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("span corruption rate must be in [0, 1)");
  if (!(mean_span > 0.0) || max_sentinels < 1) throw std::invalid_argument("span corruption: bad span settings");
  Example ex;
  ex.task = Task::span;
  ex.blank_image = true;
  if (rate == 0.0) {
    ex.input_text = text;
    return ex;
  }
  const auto noise = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(static_cast<double>(n) * rate)), 1, n - 1);
  const auto max_spans = std::min({noise, n - noise, static_cast<std::size_t>(max_sentinels)});
  const auto spans = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(static_cast<double>(noise) / mean_span)), 1, max_spans);
  const auto noise_lengths = random_partition(noise, spans, rng);
  const auto keep_lengths = random_partition(n - noise, spans, rng);

  std::vector<std::string> input, target;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < spans; ++s) {
    for (std::size_t i = 0; i < keep_lengths[s]; ++i) input.push_back(words[pos++]);
    const auto sentinel = Tokenizer::sentinel(static_cast<int>(s));
    input.push_back(sentinel);
    target.push_back(sentinel);
    for (std::size_t i = 0; i < noise_lengths[s]; ++i) target.push_back(words[pos++]);
  }
  ex.input_text = join_words(input);
  ex.target_text = join_words(target);
  return ex;
}

std::string splice_spans(const std::string& input, const std::string& target) {
  if (target.empty()) return input;
  std::map<std::string, std::vector<std::string>> spans;
  std::string current;
  for (auto& w : split_words(target)) {
    if (is_sentinel_word(w)) {
      current = w;
      spans[current];
    } else if (current.empty()) {
      throw std::invalid_argument("splice_spans: target must start with a sentinel");
    } else {
      spans[current].push_back(std::move(w));
    }
  }
  std::vector<std::string> out;
  for (auto& w : split_words(input)) {
    const auto it = spans.find(w);
    if (is_sentinel_word(w) && it != spans.end()) {
      out.insert(out.end(), it->second.begin(), it->second.end());
    } else {
      out.push_back(std::move(w));
    }
  }
  return join_words(out);
}

Example gen_split_cap_at(const std::string& alt_text, const std::string& language, std::size_t pos) {
  const auto words = split_words(alt_text);
  if (words.size() < 2) throw std::invalid_argument("split captioning needs at least 2 words; use gen_caption");
  if (pos < 1 || pos >= words.size()) throw std::invalid_argument("split position must be in [1, n-1]");
  Example ex;
  ex.task = Task::split_cap;
  ex.language = language;
  ex.input_text = "Generate the alt_text in " + language + " at " + std::to_string(pos) + ": " +
                  join_words(words, 0, pos) + " " + std::string(kSlot);
  ex.target_text = join_words(words, pos);
  return ex;
}

Example gen_split_cap(const std::string& alt_text, const std::string& language, std::mt19937_64& rng) {
  const auto n = split_words(alt_text).size();
  if (n < 2) throw std::invalid_argument("split captioning needs at least 2 words; use gen_caption");
  return gen_split_cap_at(alt_text, language, 1 + uniform_index(rng, n - 1));
}

std::string caption_prompt(const std::string& language) {
  return "Generate the alt_text in " + language + " at 0: " + std::string(kSlot);
}

Example gen_caption(const std::string& alt_text, const std::string& language) {
  if (alt_text.empty()) throw std::invalid_argument("captioning needs a non-empty alt-text");
  Example ex;
  ex.task = Task::cap;
  ex.language = language;
  ex.input_text = caption_prompt(language);
  ex.target_text = alt_text;
  return ex;
}

Example gen_ocr(const SceneSpec& scene) {
  if (scene.glyphs.empty()) throw std::invalid_argument("OCR needs a scene with at least one glyph");
  auto glyphs = scene.glyphs;
  std::stable_sort(glyphs.begin(), glyphs.end(), [](const Glyph& a, const Glyph& b) {
    return std::tie(a.box.ymin, a.box.xmin) < std::tie(b.box.ymin, b.box.xmin);
  });
  std::vector<std::string> texts;
  for (const auto& g : glyphs) texts.push_back(g.text);
  return text_example(Task::ocr, "Generate the ocr_text in " + scene.language + ": " + std::string(kSlot),
                      join_words(texts), scene);
}

std::string color_question(std::string_view class_name) { return "what color is the " + std::string(class_name); }
std::string count_question(std::string_view class_name) { return "how many " + std::string(class_name); }

std::optional<std::string> answer_question(const SceneSpec& scene, std::string_view question) {
  constexpr std::string_view color_prefix = "what color is the ";
  constexpr std::string_view count_prefix = "how many ";
  if (question.starts_with(color_prefix)) {
    const auto cls = question.substr(color_prefix.size());
    std::set<std::string> colors;
    for (const auto& o : scene.objects) {
      if (o.class_name == cls) colors.insert(o.color);
    }
    if (colors.size() != 1) return std::nullopt;
    return *colors.begin();
  }
  if (question.starts_with(count_prefix)) {
    const auto cls = question.substr(count_prefix.size());
    if (class_index(cls) < 0) return std::nullopt;
    return std::to_string(std::count_if(scene.objects.begin(), scene.objects.end(),
                                        [&](const SceneObject& o) { return o.class_name == cls; }));
  }
  return std::nullopt;
}

Example gen_vqa(const SceneSpec& scene, std::mt19937_64& rng) {
  auto [q, a] = sample_qa(scene, rng);
  return text_example(Task::vqa, "Answer in EN: " + q + " " + std::string(kSlot), a, scene);
}

Example gen_vqg(const SceneSpec& scene, std::mt19937_64& rng) {
  auto [q, a] = sample_qa(scene, rng);
  return text_example(Task::vqg, "Generate a question in " + scene.language + " for " + a + ": " + std::string(kSlot),
                      encipher(q, scene.language), scene);
}

Example gen_object_aware(const SceneSpec& scene, std::mt19937_64& rng) {
  if (scene.objects.empty()) throw std::invalid_argument("object-aware QA needs a non-empty scene");
  const auto present = present_classes(scene);
  const auto absent = absent_classes(scene);
  auto pick = [&](bool want_present) {
    const auto& pool = (want_present || absent.empty()) ? present : absent;
    return pool[uniform_index(rng, pool.size())];
  };
  std::string input;
  switch (uniform_index(rng, 4)) {
    case 0:
      input = "Answer in EN: List the objects present: " + std::string(kSlot);
      break;
    case 1:
      input = "Answer in EN: Is " + pick(uniform_index(rng, 2) == 0) + " in the image? " + std::string(kSlot);
      break;
    case 2: {
      std::vector<std::string> items;
      while (items.size() < 2) {
        auto c = pick(uniform_index(rng, 2) == 0);
        if (std::find(items.begin(), items.end(), c) == items.end()) items.push_back(std::move(c));
      }
      input = "Answer in EN: Is " + join(items, ", ") + " in the image? " + std::string(kSlot);
      break;
    }
    default: {
      const std::size_t count = 2 + uniform_index(rng, 3);
      std::vector<std::string> items;
      while (items.size() < count) {
        auto c = pick(uniform_index(rng, 2) == 0);
        if (std::find(items.begin(), items.end(), c) == items.end()) items.push_back(std::move(c));
        if (items.size() == present.size() + absent.size()) break;
      }
      input = "Answer in EN: Which of " + join(items, ", ") + " are in the image? " + std::string(kSlot);
    }
  }
  return text_example(Task::oa, input, *oa_answer(scene, input), scene);
}

int quantize_coord(double pixel, int resolution) {
  if (resolution <= 0) throw std::invalid_argument("quantize_coord: resolution must be positive");
  const double q = std::floor(pixel * 1000.0 / resolution);
  return static_cast<int>(std::clamp(q, 0.0, 999.0));
}

double dequantize_coord(int q, int resolution) { return static_cast<double>(q) * resolution / 1000.0; }

std::string format_detection(const std::vector<DetectedBox>& boxes) {
  std::vector<std::string> words;
  for (const auto& b : boxes) {
    for (int c : b.coords) words.push_back(std::to_string(c));
    words.push_back(b.class_name);
  }
  return join_words(words);
}

std::vector<DetectedBox> parse_detection(std::string_view target) {
  std::vector<DetectedBox> out;
  if (target.empty()) return out;
  const auto words = split_words(target);
  if (words.size() % 5 != 0) throw std::invalid_argument("detection target must be groups of 'y x y x class'");
  for (std::size_t i = 0; i < words.size(); i += 5) {
    DetectedBox b;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& w = words[i + k];
      if (w.empty() || w.size() > 3 || !std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw std::invalid_argument("detection coordinate '" + w + "' is not an integer in [0, 999]");
      }
      b.coords[k] = std::stoi(w);
    }
    b.class_name = words[i + 4];
    out.push_back(std::move(b));
  }
  return out;
}

Example gen_detection(const SceneSpec& scene, std::mt19937_64& rng, int resolution) {
  if (scene.objects.empty()) throw std::invalid_argument("detection needs a non-empty scene");
  auto classes = present_classes(scene);
  auto negatives = absent_classes(scene);
  shuffle_in_place(negatives, rng);
  negatives.resize(std::min(negatives.size(), 1 + uniform_index(rng, 3)));
  classes.insert(classes.end(), negatives.begin(), negatives.end());
  shuffle_in_place(classes, rng);
  return text_example(Task::det, "detect " + join(classes, " and ") + " " + std::string(kSlot),
                      format_detection(expected_boxes(scene, resolution)), scene);
}

Example make_example(Task task, const SceneSpec& scene, std::mt19937_64& rng, int resolution) {
  Example ex;
  switch (task) {
    case Task::span: ex = gen_span_corruption(alt_text(scene), rng); break;
    case Task::split_cap: ex = gen_split_cap(alt_text(scene), scene.language, rng); break;
    case Task::cap: ex = gen_caption(alt_text(scene), scene.language); break;
    case Task::ocr: ex = gen_ocr(scene); break;
    case Task::vqa: ex = gen_vqa(scene, rng); break;
    case Task::vqg: ex = gen_vqg(scene, rng); break;
    case Task::oa: ex = gen_object_aware(scene, rng); break;
    case Task::det: ex = gen_detection(scene, rng, resolution); break;
  }
  ex.language = scene.language;
  ex.scene_seed = scene.seed;
  return ex;
}

std::optional<std::string> validate_example(const Example& ex, const SceneSpec& scene, int resolution) {
  auto mismatch = [&](const std::string& expected) -> std::optional<std::string> {
    if (ex.target_text == expected) return std::nullopt;
    return "target '" + ex.target_text + "' but scene gives '" + expected + "'";
  };
  const std::string alt = alt_text(scene);
  switch (ex.task) {
    case Task::span:
      if (splice_spans(ex.input_text, ex.target_text) != alt) return "span corruption does not splice back to the alt-text";
      return std::nullopt;
    case Task::split_cap: {
      const auto prefix = "Generate the alt_text in " + scene.language + " at ";
      const auto body = between(ex.input_text, prefix, " " + std::string(kSlot));
      const auto colon = body ? body->find(": ") : std::string::npos;
      if (colon == std::string::npos) return "malformed split-caption prompt";
      const auto cap1 = body->substr(colon + 2);
      if (body->substr(0, colon) != std::to_string(split_words(cap1).size())) return "split position is not cap1's word count";
      return mismatch(alt.substr(std::min(alt.size(), cap1.size() + 1)));
    }
    case Task::cap:
      if (ex.input_text != gen_caption(alt, scene.language).input_text) return "caption prompt mismatch";
      return mismatch(alt);
    case Task::ocr: {
      const auto expected = gen_ocr(scene);
      if (ex.input_text != expected.input_text) return "OCR prompt mismatch";
      return mismatch(expected.target_text);
    }
    case Task::vqa: {
      const auto q = between(ex.input_text, "Answer in EN: ", " " + std::string(kSlot));
      const auto a = q ? answer_question(scene, *q) : std::nullopt;
      if (!a) return "unanswerable VQA prompt";
      return mismatch(*a);
    }
    case Task::vqg: {
      const auto a = between(ex.input_text, "Generate a question in " + scene.language + " for ", ": " + std::string(kSlot));
      if (!a) return "malformed VQG prompt";
      const auto answer = answer_question(scene, decipher(ex.target_text, scene.language));
      if (answer != *a) return "generated question does not have answer '" + *a + "'";
      return std::nullopt;
    }
    case Task::oa: {
      const auto a = oa_answer(scene, ex.input_text);
      if (!a) return "malformed object-aware prompt";
      return mismatch(*a);
    }
    case Task::det: {
      const auto list = between(ex.input_text, "detect ", " " + std::string(kSlot));
      if (!list) return "malformed detection prompt";
      const auto named = split_on(*list, " and ");
      for (const auto& c : present_classes(scene)) {
        if (std::find(named.begin(), named.end(), c) == named.end()) return "detection prompt misses class " + c;
      }
      return mismatch(format_detection(expected_boxes(scene, resolution)));
    }
  }
  return "unknown task";
}

}  // namespace pali
