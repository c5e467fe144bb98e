#include "pali/eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "pali/model/config.hpp"

namespace pali {

namespace {

using NgramCounts = std::map<std::string, double>;

// One count map per n-gram order (index n-1).
std::vector<NgramCounts> ngrams(const std::vector<std::string>& words, int max_n) {
  std::vector<NgramCounts> out(static_cast<std::size_t>(max_n));
  for (int n = 1; n <= max_n; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
      std::string key = words[i];
      for (std::size_t k = 1; k < static_cast<std::size_t>(n); ++k) key += ' ' + words[i + k];
      out[static_cast<std::size_t>(n - 1)][key] += 1.0;
    }
  }
  return out;
}

struct TfIdf {
  std::vector<NgramCounts> vec;
  std::vector<double> norm;
  double length = 0;
};

TfIdf tfidf(const std::vector<NgramCounts>& counts, const std::map<std::string, double>& df, double log_docs,
            double length) {
  TfIdf out;
  out.vec.resize(counts.size());
  out.norm.assign(counts.size(), 0.0);
  out.length = length;
  for (std::size_t n = 0; n < counts.size(); ++n) {
    for (const auto& [gram, tf] : counts[n]) {
      const auto it = df.find(gram);
      const double d = it == df.end() ? 0.0 : it->second;
      const double w = tf * (log_docs - std::log(std::max(1.0, d)));
      out.vec[n][gram] = w;
      out.norm[n] += w * w;
    }
  }
  return out;
}

std::vector<double> similarity(const TfIdf& hyp, const TfIdf& ref, double sigma) {
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2 * sigma * sigma));
  std::vector<double> val(hyp.vec.size(), 0.0);
  for (std::size_t n = 0; n < hyp.vec.size(); ++n) {
    for (const auto& [gram, w] : hyp.vec[n]) {
      const auto it = ref.vec[n].find(gram);
      if (it != ref.vec[n].end()) val[n] += std::min(w, it->second) * it->second;
    }
    if (hyp.norm[n] != 0 && ref.norm[n] != 0) val[n] /= std::sqrt(hyp.norm[n] * ref.norm[n]);
    val[n] *= penalty;
  }
  return val;
}

}  // namespace

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == ' ')) out.pop_back();
  return out;
}

double exact_match_accuracy(const std::vector<std::string>& predictions, const std::vector<std::vector<std::string>>& golds) {
  if (predictions.size() != golds.size()) {
    throw std::invalid_argument("exact_match_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(golds.size()) + " records");
  }
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = normalize_answer(predictions[i]);
    hits += std::any_of(golds[i].begin(), golds[i].end(), [&](const std::string& g) { return normalize_answer(g) == p; });
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double exact_match_accuracy(const std::vector<std::string>& predictions, const std::vector<EvalRecord>& records) {
  std::vector<std::vector<std::string>> golds;
  golds.reserve(records.size());
  for (const auto& r : records) golds.push_back(r.gold);
  return exact_match_accuracy(predictions, golds);
}

void CiderConfig::validate(const std::string& path) const {
  if (max_n < 1) throw ConfigError(path + ".max_n", "must be at least 1");
  if (!(sigma > 0)) throw ConfigError(path + ".sigma", "must be positive");
}

std::vector<std::string> cider_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (std::string_view(".,?!;:").find(c) == std::string_view::npos) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return out;
}

CiderResult cider_score(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references,
                        const CiderConfig& config) {
  config.validate();
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("cider_score: " + std::to_string(candidates.size()) + " candidates for " +
                                std::to_string(references.size()) + " reference sets");
  }
  std::set<std::vector<std::string>> distinct;
  for (const auto& refs : references) {
    if (refs.empty()) throw std::invalid_argument("cider_score: every candidate needs at least one reference");
    auto sorted = refs;
    std::sort(sorted.begin(), sorted.end());
    distinct.insert(std::move(sorted));
  }
  if (distinct.size() < 2) {
    throw std::invalid_argument("cider_score: need at least 2 distinct reference documents; with " +
                                std::to_string(distinct.size()) +
                                " every n-gram occurs in every document and its IDF weight collapses to 0");
  }

  // Document frequency: number of reference sets containing each n-gram.
  std::vector<std::vector<std::vector<NgramCounts>>> ref_counts(references.size());
  std::vector<std::vector<double>> ref_lengths(references.size());
  std::map<std::string, double> df;
  for (std::size_t i = 0; i < references.size(); ++i) {
    std::set<std::string> seen;
    for (const auto& r : references[i]) {
      const auto words = cider_tokens(r);
      ref_counts[i].push_back(ngrams(words, config.max_n));
      ref_lengths[i].push_back(static_cast<double>(words.size()));
      for (const auto& order : ref_counts[i].back()) {
        for (const auto& [gram, _] : order) seen.insert(gram);
      }
    }
    for (const auto& gram : seen) df[gram] += 1.0;
  }
  const double log_docs = std::log(static_cast<double>(references.size()));

  CiderResult result;
  result.per_candidate.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto words = cider_tokens(candidates[i]);
    const auto hyp = tfidf(ngrams(words, config.max_n), df, log_docs, static_cast<double>(words.size()));
    std::vector<double> total(static_cast<std::size_t>(config.max_n), 0.0);
    for (std::size_t r = 0; r < ref_counts[i].size(); ++r) {
      const auto ref = tfidf(ref_counts[i][r], df, log_docs, ref_lengths[i][r]);
      const auto sim = similarity(hyp, ref, config.sigma);
      for (std::size_t n = 0; n < total.size(); ++n) total[n] += sim[n];
    }
    double mean = 0;
    for (double v : total) mean += v;
    mean /= static_cast<double>(total.size());
    mean /= static_cast<double>(ref_counts[i].size());
    result.per_candidate.push_back(mean * 10.0);
  }
  for (double s : result.per_candidate) result.score += s;
  if (!result.per_candidate.empty()) result.score /= static_cast<double>(result.per_candidate.size());
  result.reported = result.score * config.report_scale;
  return result;
}

}  // namespace pali
