#include "pali/tasks/tokenizer.hpp"

#include <stdexcept>
#include <unordered_set>

#include "pali/model/config.hpp"
#include "pali/tasks/scene.hpp"

namespace pali {

namespace {

std::vector<std::string> build_word_set() {
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (seen.insert(w).second) words.push_back(w);
  };
  for (const char* w : {"Generate", "the", "alt_text", "in", "at", "ocr_text", "Answer", "a", "question", "for", "List",
                        "objects", "present:", "Is", "image?", "Which", "of", "are", "detect", "and", "Photo", "Yes",
                        "No", "None", "what", "color", "is", "how", "many"}) {
    add(w);
  }
  for (auto lang : kLanguages) {
    add(std::string(lang));
    add(std::string(lang) + ":");
  }
  for (auto c : kPalette) {
    add(std::string(c));
    add(std::string(c) + ",");
  }
  for (auto c : kColorNames) {
    add(std::string(c));
    add(std::string(c) + ":");
  }
  for (int n = 0; n <= 64; ++n) {
    add(std::to_string(n));
    add(std::to_string(n) + ":");
  }
  std::vector<std::string> content = {"Photo", "of", "in", "and", "what", "color", "is", "the", "how", "many"};
  for (auto c : kPalette) content.emplace_back(c);
  for (auto c : kColorNames) content.emplace_back(c);
  for (std::size_t l = 1; l < kLanguages.size(); ++l) {
    for (const auto& w : content) add(encipher(w, kLanguages[l]));
  }
  for (int n = 65; n < 1000; ++n) add(std::to_string(n));
  return words;
}

}  // namespace

const std::vector<std::string>& Tokenizer::closed_word_set() {
  static const std::vector<std::string> words = build_word_set();
  return words;
}

Tokenizer::Tokenizer(int vocab_size, int num_sentinels) : vocab_size_(vocab_size), num_sentinels_(num_sentinels) {
  if (num_sentinels < 1) throw ConfigError("tokenizer.num_sentinels", "need at least one sentinel");
  if (vocab_size < word_base()) {
    throw ConfigError("tokenizer.vocab_size", "must be at least " + std::to_string(word_base()) +
                                                  " (specials, sentinels and 256 byte tokens)");
  }
  const auto& all = closed_word_set();
  const std::size_t capacity = static_cast<std::size_t>(vocab_size - word_base());
  words_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(capacity, all.size())));
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], word_base() + static_cast<int>(i));
  for (int k = 0; k < num_sentinels_; ++k) ids_.emplace(sentinel(k), 2 + k);
}

int Tokenizer::sentinel_id(int k) const {
  if (k < 0 || k >= num_sentinels_) throw std::out_of_range("sentinel index " + std::to_string(k) + " out of range");
  return 2 + k;
}

int Tokenizer::lookup(std::string_view word) const {
  if (word.empty()) return -1;
  const auto it = ids_.find(std::string(word));
  return it == ids_.end() ? -1 : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t start = std::string_view::npos;
    if (out.empty() && pos == 0) start = 0;
    else if (text[pos] == ' ') start = pos + 1;
    if (start != std::string_view::npos) {
      std::size_t end = text.find(' ', start);
      if (end == std::string_view::npos) end = text.size();
      const int id = lookup(text.substr(start, end - start));
      if (id >= 0) {
        out.push_back(id);
        pos = end;
        continue;
      }
    }
    out.push_back(byte_id(static_cast<unsigned char>(text[pos])));
    ++pos;
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  bool first = true;
  for (int id : ids) {
    if (id == kEosId) break;
    if (id == kPadId) continue;
    if (id < 0 || id >= vocab_size_) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    if (id < 2 + num_sentinels_) {
      if (!first) out += ' ';
      out += sentinel(id - 2);
    } else if (id < word_base()) {
      out += static_cast<char>(id - 2 - num_sentinels_);
    } else {
      const auto w = static_cast<std::size_t>(id - word_base());
      if (w >= words_.size()) continue;  // unused id in the vocabulary tail
      if (!first) out += ' ';
      out += words_[w];
    }
    first = false;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (true) {
    const auto end = text.find(' ', start);
    words.emplace_back(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return words;
}

std::string join_words(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
  end = std::min(end, words.size());
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace pali
