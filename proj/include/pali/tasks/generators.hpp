#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pali/tasks/scene.hpp"

namespace pali {

enum class Task { span, split_cap, cap, ocr, vqa, vqg, oa, det };

inline constexpr std::array<Task, 8> kAllTasks = {Task::span, Task::split_cap, Task::cap, Task::ocr,
                                                  Task::vqa,  Task::vqg,       Task::oa,  Task::det};

std::string_view task_name(Task task);
/// Throws std::invalid_argument for unknown names.
Task parse_task(std::string_view name);

/// One training pair. Images are referenced by scene seed and rendered on
/// demand; `blank_image` marks text-only examples (span corruption), which
/// use an all-zero image.
struct Example {
  Task task = Task::cap;
  std::string language = "EN";
  std::string input_text;
  std::string target_text;
  std::uint64_t scene_seed = 0;
  bool blank_image = false;
};

/// T5-style span corruption at word granularity. The noise count is
/// round(rate * n) clamped to [1, n-1] (0 when rate is 0); spans alternate
/// with kept runs starting with a kept run, span count round(noise /
/// mean_span). Spans become <extra_id_0>, <extra_id_1>, ... in the input; the
/// target lists each sentinel followed by its span.
Example gen_span_corruption(const std::string& text, std::mt19937_64& rng, double rate = 0.15,
                            double mean_span = 3.0, int max_sentinels = 100);
/// Inverse of span corruption: puts target spans back at their sentinels.
std::string splice_spans(const std::string& input, const std::string& target);

/// Splits alt_text at a uniform word boundary in [1, n-1].
Example gen_split_cap(const std::string& alt_text, const std::string& language, std::mt19937_64& rng);
/// Split at a given boundary (number of words kept in the prompt).
Example gen_split_cap_at(const std::string& alt_text, const std::string& language, std::size_t pos);
/// The captioning prompt, e.g. "Generate the alt_text in EN at 0: <extra_id_0>".
std::string caption_prompt(const std::string& language);

Example gen_caption(const std::string& alt_text, const std::string& language);
/// Glyph strings ordered by (ymin, xmin), space-joined.
Example gen_ocr(const SceneSpec& scene);
Example gen_vqa(const SceneSpec& scene, std::mt19937_64& rng);
/// Question in the scene's language for an English answer.
Example gen_vqg(const SceneSpec& scene, std::mt19937_64& rng);
Example gen_object_aware(const SceneSpec& scene, std::mt19937_64& rng);
Example gen_detection(const SceneSpec& scene, std::mt19937_64& rng, int resolution);

/// Dispatches to the generator for `task`; the text for span corruption and
/// captioning is the scene's alt-text.
Example make_example(Task task, const SceneSpec& scene, std::mt19937_64& rng, int resolution);

/// The English question templates over scene ground truth.
std::string color_question(std::string_view class_name);
std::string count_question(std::string_view class_name);
/// Answers a generated question from the scene, or nullopt when the
/// question is not one of the templates.
std::optional<std::string> answer_question(const SceneSpec& scene, std::string_view question);

/// floor(pixel * 1000 / resolution) clamped to [0, 999].
int quantize_coord(double pixel, int resolution);
/// Lower edge of quantization bin q in pixels.
double dequantize_coord(int q, int resolution);

struct DetectedBox {
  std::array<int, 4> coords;  // ymin xmin ymax xmax, quantized
  std::string class_name;
};
/// Parses "ymin xmin ymax xmax class ..." detection targets.
std::vector<DetectedBox> parse_detection(std::string_view target);
std::string format_detection(const std::vector<DetectedBox>& boxes);

/// Recomputes the target (and checks the prompt) from scene ground truth.
/// Returns an error description, or nullopt when the example is consistent.
std::optional<std::string> validate_example(const Example& example, const SceneSpec& scene, int resolution);

}  // namespace pali
