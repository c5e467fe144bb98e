#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pali/numerics/tensor.hpp"

namespace pali {

inline constexpr int kEmbeddingDim = 64;

/// L2-normalized 64-d image featurization: bins 0-7 hold the share of
/// non-background pixels in each palette color, bins 8-63 a 7x8 occupancy
/// grid scaled by 0.25.
Eigen::VectorXd image_embedding(const TensorD& image);

/// L2-normalized hashed bag of words over the deciphered text: color words
/// hit their color bin, every other word hits 8 + hash % 56 with weight 0.25.
Eigen::VectorXd text_embedding(std::string_view text, std::string_view language);

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct ScoredPair {
  Eigen::VectorXd image_embedding;
  Eigen::VectorXd text_embedding;
  double score = 0;
};

ScoredPair score_pair(const TensorD& image, std::string_view text, std::string_view language);

/// Indices (ascending) of the ceil(keep_fraction * N) highest scores; equal
/// scores keep the earlier record.
std::vector<std::size_t> quality_filter(const std::vector<double>& scores, double keep_fraction = 0.10);

/// 64-bit mean hash: grayscale, 8x8 block means, bit set where the block is
/// brighter than the mean of all blocks. Bit index is row * 8 + col.
std::uint64_t perceptual_hash(const TensorD& image);
int hamming_distance(std::uint64_t a, std::uint64_t b);

/// Indices (ascending) of corpus hashes farther than `threshold` from every
/// eval hash.
std::vector<std::size_t> near_dedup(const std::vector<std::uint64_t>& corpus, const std::vector<std::uint64_t>& eval,
                                    int threshold = 4);

}  // namespace pali
