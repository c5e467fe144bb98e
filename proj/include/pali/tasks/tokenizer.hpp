#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pali/model/config.hpp"

namespace pali {

/// Word-level tokenizer over the generators' closed word set with a byte
/// fallback. Id layout: PAD 0, EOS 1, sentinels <extra_id_k> from 2, then
/// 256 byte tokens, then whole words in priority order (as many as fit).
///
/// A word or sentinel token stands for " word" (leading space) unless it is
/// the first token; byte tokens stand for exactly one byte. This makes
/// decode(encode(s)) == s for every string.
class Tokenizer {
 public:
  explicit Tokenizer(int vocab_size = 2048, int num_sentinels = 100);

  std::vector<int> encode(std::string_view text) const;
  /// PAD tokens are skipped; decoding stops at the first EOS.
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return vocab_size_; }
  int num_sentinels() const { return num_sentinels_; }
  int sentinel_id(int k) const;
  int num_words() const { return static_cast<int>(words_.size()); }
  bool is_sentinel(int id) const { return id >= 2 && id < 2 + num_sentinels_; }

  static std::string sentinel(int k) { return "<extra_id_" + std::to_string(k) + ">"; }
  /// Candidate word list in priority order, before truncation to capacity.
  static const std::vector<std::string>& closed_word_set();

 private:
  int byte_id(unsigned char b) const { return 2 + num_sentinels_ + b; }
  int word_base() const { return 2 + num_sentinels_ + 256; }
  int lookup(std::string_view word) const;

  int vocab_size_;
  int num_sentinels_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Splits on single spaces (empty pieces kept), the inverse of joining with " ".
std::vector<std::string> split_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words, std::size_t begin = 0, std::size_t end = std::string::npos);

}  // namespace pali
