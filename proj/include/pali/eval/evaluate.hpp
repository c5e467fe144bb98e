#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pali/eval/metrics.hpp"
#include "pali/model/model.hpp"
#include "pali/tasks/corpus.hpp"
#include "pali/tasks/tokenizer.hpp"

namespace pali {

struct ClassScore {
  std::string name;
  double log_prob = 0;
};

/// Scores every class string as the continuation of `prompt` and ranks them
/// by descending log-probability, ties by class name. Throws
/// std::invalid_argument on an empty or duplicated class list.
std::vector<ClassScore> zero_shot_classify(const PaliModel<double>& model, const Tokenizer& tokenizer, const TensorD& image,
                                           const std::vector<std::string>& class_names,
                                           const std::string& prompt = std::string(kZeroShotPrompt),
                                           const ForwardOptions<double>& options = {});

/// True when `gold` is among the first k entries of `ranking`.
bool in_top_k(const std::vector<ClassScore>& ranking, const std::string& gold, std::size_t k);

/// Source of predictions for evaluate(); implementations must be callable
/// concurrently from several threads.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string generate(const EvalRecord& record) const = 0;
  virtual std::vector<ClassScore> rank(const EvalRecord& record, const std::vector<std::string>& classes) const = 0;
};

/// Runs a model on corpus scenes rendered at the model's resolution.
class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const PaliModel<double>& model, const Corpus& corpus, DecodeMode mode = DecodeMode::greedy(),
                 ForwardOptions<double> options = {});

  std::string generate(const EvalRecord& record) const override;
  std::vector<ClassScore> rank(const EvalRecord& record, const std::vector<std::string>& classes) const override;

 private:
  const PaliModel<double>& model_;
  const Corpus& corpus_;
  DecodeMode mode_;
  ForwardOptions<double> options_;
  Tokenizer tokenizer_;
};

struct EvalOptions {
  std::string decode_mode = "greedy";
  std::uint64_t seed = 0;
  int threads = 1;
  /// Candidate classes for "classify" records.
  std::vector<std::string> classes = classification_classes();
  CiderConfig cider;
};

struct EvalResult {
  /// {task, metric_name, value, n_records, decode_mode, seed} plus
  /// task-specific fields (top5 for classify, cider_raw for caption).
  nlohmann::json metrics;
  /// One {id, prediction, gold, correct} object per record, in input order.
  std::vector<nlohmann::json> predictions;
};

/// Throws std::invalid_argument when records are empty or mix tasks.
EvalResult evaluate(const Predictor& predictor, const std::vector<EvalRecord>& records, const EvalOptions& options = {});

/// Writes metrics_<task>.json and predictions_<task>.jsonl under `dir`.
void write_eval_result(const EvalResult& result, const std::string& dir);

}  // namespace pali
