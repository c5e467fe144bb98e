#include "pali/tasks/filter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pali/tasks/scene.hpp"
#include "pali/tasks/tokenizer.hpp"

namespace pali {

namespace {

std::uint32_t fnv1a32(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

Eigen::VectorXd normalized(Eigen::VectorXd v) {
  const double n = v.norm();
  if (n > 0) v /= n;
  return v;
}

}  // namespace

Eigen::VectorXd image_embedding(const TensorD& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("image_embedding: expected [H,W,3], got " + shape_string(image.shape()));
  const Index h = image.dim(0), w = image.dim(1);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(kEmbeddingDim);
  Eigen::MatrixXd occupancy = Eigen::MatrixXd::Zero(7, 8);
  double foreground = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const std::array<double, 3> px = {image.at({y, x, 0}), image.at({y, x, 1}), image.at({y, x, 2})};
      bool background = true;
      for (int c = 0; c < 3; ++c) background &= std::abs(px[c] * 255.0 - kBackgroundRgb[c]) < 0.5;
      if (background) continue;
      foreground += 1;
      occupancy(y * 7 / h, x * 8 / w) += 1;
      for (std::size_t k = 0; k < kColorRgb.size(); ++k) {
        bool match = true;
        for (int c = 0; c < 3; ++c) match &= std::abs(px[c] * 255.0 - kColorRgb[k][c]) < 0.5;
        if (match) e[static_cast<Index>(k)] += 1;
      }
    }
  if (foreground > 0) {
    e.head(8) /= foreground;
    occupancy /= foreground;
  }
  for (Index r = 0; r < 7; ++r)
    for (Index c = 0; c < 8; ++c) e[8 + r * 8 + c] = 0.25 * occupancy(r, c);
  return normalized(e);
}

Eigen::VectorXd text_embedding(std::string_view text, std::string_view language) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(kEmbeddingDim);
  for (const auto& word : split_words(decipher(text, language))) {
    if (word.empty()) continue;
    const int color = color_index(word);
    if (color >= 0) {
      e[color] += 1.0;
    } else {
      e[8 + fnv1a32(word) % 56] += 0.25;
    }
  }
  return normalized(e);
}

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  const double denom = u.norm() * v.norm();
  return denom > 0 ? u.dot(v) / denom : 0.0;
}

ScoredPair score_pair(const TensorD& image, std::string_view text, std::string_view language) {
  ScoredPair p{image_embedding(image), text_embedding(text, language), 0.0};
  p.score = cosine_similarity(p.image_embedding, p.text_embedding);
  return p;
}

std::vector<std::size_t> quality_filter(const std::vector<double>& scores, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("quality_filter: keep_fraction must be in (0, 1]");
  if (scores.empty()) return {};
  const auto keep = std::min(scores.size(), static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(scores.size()) - 1e-9)));
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

std::uint64_t perceptual_hash(const TensorD& image) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) < 8 || image.dim(1) < 8) {
    throw ShapeError("perceptual_hash: expected [H,W,3] with H,W >= 8, got " + shape_string(image.shape()));
  }
  const Index h = image.dim(0), w = image.dim(1);
  std::array<double, 64> blocks{};
  for (Index by = 0; by < 8; ++by)
    for (Index bx = 0; bx < 8; ++bx) {
      double sum = 0;
      const Index y0 = by * h / 8, y1 = (by + 1) * h / 8, x0 = bx * w / 8, x1 = (bx + 1) * w / 8;
      for (Index y = y0; y < y1; ++y)
        for (Index x = x0; x < x1; ++x) sum += (image.at({y, x, 0}) + image.at({y, x, 1}) + image.at({y, x, 2})) / 3.0;
      blocks[static_cast<std::size_t>(by * 8 + bx)] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  const double mean = std::accumulate(blocks.begin(), blocks.end(), 0.0) / 64.0;
  std::uint64_t hash = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    if (blocks[i] > mean) hash |= std::uint64_t{1} << i;
  }
  return hash;
}

int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

std::vector<std::size_t> near_dedup(const std::vector<std::uint64_t>& corpus, const std::vector<std::uint64_t>& eval,
                                    int threshold) {
  if (threshold < 0) throw std::invalid_argument("near_dedup: threshold must be >= 0");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const bool duplicate = std::any_of(eval.begin(), eval.end(),
                                       [&](std::uint64_t e) { return hamming_distance(corpus[i], e) <= threshold; });
    if (!duplicate) kept.push_back(i);
  }
  return kept;
}

}  // namespace pali
