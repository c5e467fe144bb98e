#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pali/tasks/corpus.hpp"

namespace pali {

/// Lowercase, trim, collapse internal whitespace and drop trailing periods.
std::string normalize_answer(std::string_view s);

/// Mean over items of 1{normalize(pred) is among the normalized golds}.
/// Throws std::invalid_argument on a length mismatch.
double exact_match_accuracy(const std::vector<std::string>& predictions, const std::vector<std::vector<std::string>>& golds);
double exact_match_accuracy(const std::vector<std::string>& predictions, const std::vector<EvalRecord>& records);

struct CiderConfig {
  int max_n = 4;
  double sigma = 6.0;
  double report_scale = 100.0;

  void validate(const std::string& path = "cider") const;
};

struct CiderResult {
  /// Mean per-candidate CIDEr-D including the usual x10 factor.
  double score = 0;
  /// score * report_scale.
  double reported = 0;
  std::vector<double> per_candidate;
};

/// CIDEr-D with document frequencies taken from the reference sets. Each
/// candidate is compared to its own references. Throws std::invalid_argument
/// when fewer than two distinct reference sets exist (IDF would be zero for
/// every n-gram) or when a reference set is empty.
CiderResult cider_score(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references,
                        const CiderConfig& config = {});

/// Lowercased whitespace tokens with . , ? ! ; : stripped.
std::vector<std::string> cider_tokens(std::string_view text);

}  // namespace pali
