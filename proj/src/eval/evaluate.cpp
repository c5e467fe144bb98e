#include "pali/eval/evaluate.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace pali {

std::vector<ClassScore> zero_shot_classify(const PaliModel<double>& model, const Tokenizer& tokenizer, const TensorD& image,
                                           const std::vector<std::string>& class_names, const std::string& prompt,
                                           const ForwardOptions<double>& options) {
  if (class_names.empty()) throw std::invalid_argument("zero_shot_classify: no class names");
  std::set<std::string> unique;
  for (const auto& c : class_names) {
    if (!unique.insert(c).second) throw std::invalid_argument("zero_shot_classify: duplicate class name '" + c + "'");
  }
  auto prompt_ids = tokenizer.encode(prompt);
  if (static_cast<int>(prompt_ids.size()) > model.config.encdec.max_text_len) {
    throw std::length_error("zero_shot_classify: prompt has " + std::to_string(prompt_ids.size()) +
                            " tokens, more than max_text_len " + std::to_string(model.config.encdec.max_text_len));
  }
  const DecoderSession<double> session(model, image, prompt_ids, options);
  std::vector<ClassScore> out;
  out.reserve(class_names.size());
  for (const auto& name : class_names) {
    auto ids = tokenizer.encode(name);
    ids.push_back(kEosId);
    out.push_back({name, score_candidate(session, ids)});
  }
  std::sort(out.begin(), out.end(), [](const ClassScore& a, const ClassScore& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.name < b.name;
  });
  return out;
}

bool in_top_k(const std::vector<ClassScore>& ranking, const std::string& gold, std::size_t k) {
  const auto n = std::min(k, ranking.size());
  return std::any_of(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(n),
                     [&](const ClassScore& c) { return c.name == gold; });
}

ModelPredictor::ModelPredictor(const PaliModel<double>& model, const Corpus& corpus, DecodeMode mode,
                               ForwardOptions<double> options)
    : model_(model),
      corpus_(corpus),
      mode_(mode),
      options_(options),
      tokenizer_(model.config.encdec.vocab_size, model.config.encdec.num_sentinels) {}

std::string ModelPredictor::generate(const EvalRecord& record) const {
  const int max_len = model_.config.encdec.max_text_len;
  auto prompt = tokenizer_.encode(record.input_text);
  if (static_cast<int>(prompt.size()) > max_len) prompt.resize(static_cast<std::size_t>(max_len));
  const auto image = render_scene(corpus_.scene(record.scene_seed), model_.config.vit.image_resolution);
  return tokenizer_.decode(pali::generate(model_, image, prompt, mode_, max_len, options_));
}

std::vector<ClassScore> ModelPredictor::rank(const EvalRecord& record, const std::vector<std::string>& classes) const {
  const auto image = render_scene(corpus_.scene(record.scene_seed), model_.config.vit.image_resolution);
  return zero_shot_classify(model_, tokenizer_, image, classes, record.input_text, options_);
}

EvalResult evaluate(const Predictor& predictor, const std::vector<EvalRecord>& records, const EvalOptions& options) {
  if (records.empty()) throw std::invalid_argument("evaluate: no records");
  const std::string task = records.front().task;
  for (const auto& r : records) {
    if (r.task != task) throw std::invalid_argument("evaluate: mixed tasks '" + task + "' and '" + r.task + "'");
    if (r.gold.empty()) throw std::invalid_argument("evaluate: record '" + r.id + "' has no gold answer");
  }
  if (task != "vqa" && task != "caption" && task != "classify") {
    throw std::invalid_argument("evaluate: unknown task '" + task + "' (known: vqa, caption, classify)");
  }

  const auto n = records.size();
  std::vector<std::string> preds(n);
  std::vector<std::vector<ClassScore>> rankings(task == "classify" ? n : 0);
  parallel_for(n, options.threads, [&](std::size_t i) {
    if (task == "classify") {
      rankings[i] = predictor.rank(records[i], options.classes);
      preds[i] = rankings[i].front().name;
    } else {
      preds[i] = predictor.generate(records[i]);
    }
  });

  EvalResult result;
  result.metrics = {{"task", task},
                    {"n_records", n},
                    {"decode_mode", task == "classify" ? std::string("score") : options.decode_mode},
                    {"seed", options.seed}};
  std::vector<bool> correct(n);
  if (task == "classify") {
    std::size_t top1 = 0, top5 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      correct[i] = in_top_k(rankings[i], records[i].gold.front(), 1);
      top1 += correct[i];
      top5 += in_top_k(rankings[i], records[i].gold.front(), 5);
    }
    result.metrics["metric_name"] = "top1";
    result.metrics["value"] = static_cast<double>(top1) / static_cast<double>(n);
    result.metrics["top1"] = result.metrics["value"];
    result.metrics["top5"] = static_cast<double>(top5) / static_cast<double>(n);
  } else {
    for (std::size_t i = 0; i < n; ++i) correct[i] = exact_match_accuracy({preds[i]}, {records[i].gold}) == 1.0;
    if (task == "vqa") {
      result.metrics["metric_name"] = "exact_match";
      result.metrics["value"] = exact_match_accuracy(preds, records);
    } else {
      std::vector<std::vector<std::string>> refs;
      for (const auto& r : records) refs.push_back(r.gold);
      const auto cider = cider_score(preds, refs, options.cider);
      result.metrics["metric_name"] = "cider";
      result.metrics["value"] = cider.reported;
      result.metrics["cider_raw"] = cider.score;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json p = {{"id", records[i].id}, {"prediction", preds[i]}, {"gold", records[i].gold}, {"correct", bool(correct[i])}};
    if (task == "classify") {
      nlohmann::json top = nlohmann::json::array();
      for (std::size_t k = 0; k < std::min<std::size_t>(5, rankings[i].size()); ++k) {
        top.push_back({{"class", rankings[i][k].name}, {"log_prob", rankings[i][k].log_prob}});
      }
      p["top5"] = std::move(top);
    }
    result.predictions.push_back(std::move(p));
  }
  return result;
}

void write_eval_result(const EvalResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string task = result.metrics.at("task");
  const auto base = std::filesystem::path(dir);
  {
    std::ofstream out(base / ("metrics_" + task + ".json"), std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write metrics under " + dir);
    out << result.metrics.dump(2) << '\n';
  }
  std::ofstream out(base / ("predictions_" + task + ".jsonl"), std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write predictions under " + dir);
  for (const auto& p : result.predictions) out << p.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

}  // namespace pali
