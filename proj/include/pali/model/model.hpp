#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pali/model/config.hpp"
#include "pali/numerics.hpp"

namespace pali {

/// Architecture description plus weights. Parameter names:
///   vit.*        image encoder (patch projection, 2D positional grid, blocks)
///   projector.*  linear map from ViT width to d_model
///   encdec.*     token embedding, encoder/decoder stacks, output head
template <typename Scalar>
struct PaliModel {
  ModelConfig config;
  ParamSet<Scalar> params;

  /// Deterministic initialization; each tensor's stream depends only on
  /// (seed, parameter name).
  static PaliModel init(const ModelConfig& config, std::uint64_t seed);
};

/// Unpooled patch features after the projector: [N_patches, d_model].
template <typename Scalar>
struct VisualTokens {
  Tensor<Scalar> tokens;
  int source_resolution = 0;
};

/// Encoder output plus the key-padding pattern the decoder must respect.
template <typename Scalar>
struct EncodedInput {
  Tensor<Scalar> states;          // [N + T, d_model]
  std::vector<bool> key_padding;  // true where the position is a pad token
};

/// Attention probabilities captured during a forward pass.
template <typename Scalar>
struct AttentionProbe {
  struct Record {
    std::string layer;
    Index head;
    typename Tensor<Scalar>::Matrix probs;
  };
  std::vector<Record> records;
};

template <typename Scalar>
struct ForwardOptions {
  /// Applied to attention and MLP branch outputs; 0 at evaluation time.
  double dropout_rate = 0.0;
  std::uint64_t dropout_seed = 0;
  /// Constant added to every decoder logit.
  Scalar logit_shift = 0;
  /// Extra constant for every logit at decoder position t; positions past the
  /// end get none.
  std::vector<Scalar> step_logit_shifts;
  AttentionProbe<Scalar>* probe = nullptr;
};

/// [R, R, 3] image -> [N, patch_size^2 * 3] patches, row-major over the
/// patch grid; each patch is flattened as (row, col, channel).
template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& image, int patch_size);

/// Records PaLI forward passes on a tape through a parameter Graph.
template <typename Scalar>
class PaliGraph {
 public:
  struct Encoded {
    Var<Scalar> states;
    std::vector<bool> key_padding;
  };

  PaliGraph(Graph<Scalar>& graph, const ModelConfig& config, ForwardOptions<Scalar> options = {});

  /// ViT patch features [N, width]; no pooling, final layer norm applied.
  Var<Scalar> vit(const Tensor<Scalar>& image);
  /// Projector: [N, width] -> [N, d_model].
  Var<Scalar> project(const Var<Scalar>& vit_features);
  /// Encoder over [visual ; embedded text]; text may be empty.
  Encoded encode(const std::vector<int>& text, const Var<Scalar>& visual);
  /// Decoder logits [T, vocab] for decoder inputs (already shifted right).
  Var<Scalar> decode(const Encoded& encoded, const std::vector<int>& decoder_inputs);
  /// Cross-entropy of `targets` (ending in EOS) given image and text.
  Var<Scalar> loss(const Tensor<Scalar>& image, const std::vector<int>& text, const std::vector<int>& targets,
                   Reduction reduction = Reduction::mean);

  Graph<Scalar>& graph() { return graph_; }

 private:
  Var<Scalar> linear(const Var<Scalar>& x, const std::string& w, const std::string& b = {});
  Var<Scalar> norm(const Var<Scalar>& x, const std::string& prefix);
  Var<Scalar> mha(const Var<Scalar>& xq, const Var<Scalar>& xkv, const std::string& prefix, int heads, bool biases,
                  const Var<Scalar>& position_bias, const Tensor<Scalar>& mask);
  Var<Scalar> drop(const Var<Scalar>& x);

  Graph<Scalar>& graph_;
  ModelConfig config_;
  ForwardOptions<Scalar> options_;
  std::mt19937_64 dropout_rng_;
};

/// Decoder inputs for teacher forcing: [PAD] + targets[:-1].
std::vector<int> shift_right(const std::vector<int>& targets);

template <typename Scalar>
Tensor<Scalar> vit_forward(const PaliModel<Scalar>& model, const Tensor<Scalar>& image);

template <typename Scalar>
VisualTokens<Scalar> visual_tokens(const PaliModel<Scalar>& model, const Tensor<Scalar>& image);

template <typename Scalar>
EncodedInput<Scalar> encode_multimodal(const PaliModel<Scalar>& model, const std::vector<int>& text_tokens,
                                       const VisualTokens<Scalar>& visual, const ForwardOptions<Scalar>& options = {});

/// Logits [T, vocab]; `targets` must end with EOS.
template <typename Scalar>
Tensor<Scalar> decode_teacher_forced(const PaliModel<Scalar>& model, const EncodedInput<Scalar>& encoded,
                                     const std::vector<int>& targets, const ForwardOptions<Scalar>& options = {});

/// Encodes an (image, prompt) once and answers decoder queries against it.
template <typename Scalar>
class DecoderSession {
 public:
  DecoderSession(const PaliModel<Scalar>& model, const Tensor<Scalar>& image, const std::vector<int>& prompt,
                 ForwardOptions<Scalar> options = {});

  /// Row-wise log-softmax of the decoder logits for inputs [PAD] + tokens.
  /// Row t is the distribution over the token following tokens[0..t).
  Tensor<Scalar> log_probs(const std::vector<int>& tokens) const;
  /// Log-distribution of the next token after `prefix`.
  typename Tensor<Scalar>::Vector next_log_probs(const std::vector<int>& prefix) const;

  const PaliModel<Scalar>& model() const { return model_; }

 private:
  const PaliModel<Scalar>& model_;
  ForwardOptions<Scalar> options_;
  EncodedInput<Scalar> encoded_;
};

struct DecodeMode {
  enum class Kind { greedy, beam } kind = Kind::greedy;
  int beam_size = 1;

  static DecodeMode greedy() { return {}; }
  static DecodeMode beam(int k) { return {Kind::beam, k}; }
};

/// Greedy: argmax per step, ties to the lowest id. Beam: highest total
/// log-probability among completed hypotheses, no length normalization.
/// Stops at EOS (included in the output) or after max_len tokens.
template <typename Scalar>
std::vector<int> generate(const DecoderSession<Scalar>& session, const DecodeMode& mode, int max_len);

template <typename Scalar>
std::vector<int> generate(const PaliModel<Scalar>& model, const Tensor<Scalar>& image, const std::vector<int>& prompt,
                          const DecodeMode& mode, int max_len, const ForwardOptions<Scalar>& options = {});

/// Sum of per-step log-probabilities of `tokens` under teacher forcing, with
/// EOS absorbing: tokens after the first EOS must be EOS and add 0, otherwise
/// the sequence has probability 0 (-inf).
template <typename Scalar>
Scalar sequence_log_prob(const DecoderSession<Scalar>& session, const std::vector<int>& tokens);

/// log P(candidate | image, prompt); candidate must be non-empty and end
/// with EOS.
template <typename Scalar>
Scalar score_candidate(const DecoderSession<Scalar>& session, const std::vector<int>& candidate);

template <typename Scalar>
Scalar score_candidate(const PaliModel<Scalar>& model, const Tensor<Scalar>& image, const std::vector<int>& prompt,
                       const std::vector<int>& candidate, const ForwardOptions<Scalar>& options = {});

/// Bilinearly resizes the ViT positional grid for a new input resolution
/// (patch size unchanged). Every other parameter is copied bit-for-bit.
template <typename Scalar>
PaliModel<Scalar> resize_positional_embeddings(const PaliModel<Scalar>& model, int new_resolution);

}  // namespace pali
