#include "pali/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string_view>

namespace pali {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
class Initializer {
 public:
  Initializer(ParamSet<Scalar>& params, std::uint64_t seed) : params_(params), seed_(seed) {}

  void normal(const std::string& name, Shape shape, double stddev) {
    std::mt19937_64 rng(splitmix64(seed_ ^ fnv1a(name)));
    std::normal_distribution<double> nd(0.0, stddev);
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(nd(rng));
    params_.add(name, std::move(t));
  }

  void dense(const std::string& name, Index fan_in, Index fan_out) {
    normal(name, {fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }

  void zeros(const std::string& name, Index n) { params_.add(name, Tensor<Scalar>::zeros({n})); }

  void layer_norm(const std::string& prefix, Index n) {
    params_.add(prefix + ".g", Tensor<Scalar>::constant({n}, Scalar(1)));
    zeros(prefix + ".b", n);
  }

  void attention(const std::string& prefix, Index width, bool biases) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) dense(prefix + "." + w, width, width);
    if (biases) {
      for (const char* b : {"bq", "bk", "bv", "bo"}) zeros(prefix + "." + b, width);
    }
  }

 private:
  ParamSet<Scalar>& params_;
  std::uint64_t seed_;
};

std::string block(const char* stack, int i) { return std::string(stack) + ".block" + std::to_string(i); }

template <typename Scalar>
Tensor<Scalar> key_padding_mask(Index queries, const std::vector<bool>& key_padding) {
  if (std::none_of(key_padding.begin(), key_padding.end(), [](bool b) { return b; })) return {};
  const auto keys = static_cast<Index>(key_padding.size());
  Tensor<Scalar> mask(Shape{queries, keys});
  for (Index j = 0; j < keys; ++j) {
    if (key_padding[static_cast<std::size_t>(j)]) mask.matrix().col(j).setConstant(-std::numeric_limits<Scalar>::infinity());
  }
  return mask;
}

template <typename Scalar>
Tensor<Scalar> causal_mask(Index n) {
  Tensor<Scalar> mask(Shape{n, n});
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) mask.matrix()(i, j) = -std::numeric_limits<Scalar>::infinity();
  return mask;
}

void check_targets(const std::vector<int>& targets, const EncDecConfig& cfg, const char* op) {
  if (targets.empty() || targets.back() != kEosId) {
    throw std::invalid_argument(std::string(op) + ": targets must end with EOS");
  }
  if (static_cast<int>(targets.size()) > cfg.max_text_len) {
    throw std::length_error(std::string(op) + ": target length " + std::to_string(targets.size()) +
                            " exceeds max_text_len " + std::to_string(cfg.max_text_len));
  }
}

}  // namespace

template <typename Scalar>
PaliModel<Scalar> PaliModel<Scalar>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  PaliModel model{config, {}};
  Initializer<Scalar> init(model.params, seed);
  const auto& vc = config.vit;
  const auto& ec = config.encdec;

  const Index patch_dim = static_cast<Index>(vc.patch_size) * vc.patch_size * 3;
  init.dense("vit.patch.w", patch_dim, vc.width);
  init.zeros("vit.patch.b", vc.width);
  init.normal("vit.pos", {vc.grid_size(), vc.grid_size(), vc.width}, 0.02);
  for (int i = 0; i < vc.depth; ++i) {
    const auto pre = block("vit", i);
    init.layer_norm(pre + ".ln1", vc.width);
    init.attention(pre + ".attn", vc.width, true);
    init.layer_norm(pre + ".ln2", vc.width);
    init.dense(pre + ".mlp.w1", vc.width, vc.mlp_dim);
    init.zeros(pre + ".mlp.b1", vc.mlp_dim);
    init.dense(pre + ".mlp.w2", vc.mlp_dim, vc.width);
    init.zeros(pre + ".mlp.b2", vc.width);
  }
  init.layer_norm("vit.ln_f", vc.width);

  init.dense("projector.w", vc.width, ec.d_model);
  init.zeros("projector.b", ec.d_model);

  init.normal("encdec.embed", {ec.vocab_size, ec.d_model}, 1.0);
  init.normal("encdec.enc.rel_bias", {ec.rel_buckets, ec.heads}, 0.1);
  for (int i = 0; i < ec.enc_layers; ++i) {
    const auto pre = block("encdec.enc", i);
    init.layer_norm(pre + ".ln1", ec.d_model);
    init.attention(pre + ".attn", ec.d_model, false);
    init.layer_norm(pre + ".ln2", ec.d_model);
    init.dense(pre + ".ffn.w1", ec.d_model, ec.ffn_dim);
    init.dense(pre + ".ffn.w2", ec.ffn_dim, ec.d_model);
  }
  init.layer_norm("encdec.enc.ln_f", ec.d_model);
  init.normal("encdec.dec.rel_bias", {ec.rel_buckets, ec.heads}, 0.1);
  for (int i = 0; i < ec.dec_layers; ++i) {
    const auto pre = block("encdec.dec", i);
    init.layer_norm(pre + ".ln1", ec.d_model);
    init.attention(pre + ".self", ec.d_model, false);
    init.layer_norm(pre + ".ln2", ec.d_model);
    init.attention(pre + ".cross", ec.d_model, false);
    init.layer_norm(pre + ".ln3", ec.d_model);
    init.dense(pre + ".ffn.w1", ec.d_model, ec.ffn_dim);
    init.dense(pre + ".ffn.w2", ec.ffn_dim, ec.d_model);
  }
  init.layer_norm("encdec.dec.ln_f", ec.d_model);
  if (!ec.tie_embeddings) init.dense("encdec.lm_head", ec.d_model, ec.vocab_size);
  return model;
}

template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& image, int patch_size) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != image.dim(1)) {
    throw ShapeError("patchify: expected a square [R,R,3] image, got " + shape_string(image.shape()));
  }
  const Index r = image.dim(0);
  const Index p = patch_size;
  if (p <= 0 || r % p != 0) {
    throw ShapeError("patchify: resolution " + std::to_string(r) + " is not divisible by patch size " +
                     std::to_string(p));
  }
  const Index grid = r / p;
  Tensor<Scalar> out(Shape{grid * grid, p * p * 3});
  for (Index gy = 0; gy < grid; ++gy)
    for (Index gx = 0; gx < grid; ++gx) {
      Scalar* dst = out.data() + (gy * grid + gx) * p * p * 3;
      for (Index y = 0; y < p; ++y) {
        const Scalar* src = image.data() + ((gy * p + y) * r + gx * p) * 3;
        std::copy_n(src, p * 3, dst + y * p * 3);
      }
    }
  return out;
}

std::vector<int> shift_right(const std::vector<int>& targets) {
  std::vector<int> out;
  out.reserve(targets.size());
  out.push_back(kPadId);
  if (!targets.empty()) out.insert(out.end(), targets.begin(), targets.end() - 1);
  return out;
}

template <typename Scalar>
PaliGraph<Scalar>::PaliGraph(Graph<Scalar>& graph, const ModelConfig& config, ForwardOptions<Scalar> options)
    : graph_(graph), config_(config), options_(options), dropout_rng_(options.dropout_seed) {}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::linear(const Var<Scalar>& x, const std::string& w, const std::string& b) {
  auto y = matmul(x, graph_[w]);
  return b.empty() ? y : add(y, graph_[b]);
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::norm(const Var<Scalar>& x, const std::string& prefix) {
  return layer_norm(x, graph_[prefix + ".g"], graph_[prefix + ".b"], static_cast<Scalar>(config_.encdec.layer_norm_eps));
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::drop(const Var<Scalar>& x) {
  return dropout(x, options_.dropout_rate, dropout_rng_);
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::mha(const Var<Scalar>& xq, const Var<Scalar>& xkv, const std::string& prefix, int heads,
                                   bool biases, const Var<Scalar>& position_bias, const Tensor<Scalar>& mask) {
  auto q = linear(xq, prefix + ".wq", biases ? prefix + ".bq" : "");
  auto k = linear(xkv, prefix + ".wk", biases ? prefix + ".bk" : "");
  auto v = linear(xkv, prefix + ".wv", biases ? prefix + ".bv" : "");
  auto o = attention(q, k, v, position_bias, AttentionSpec<Scalar>{heads, mask});
  if (options_.probe) {
    const Index hd = q.dim(1) / heads;
    const Tensor<Scalar>* bias = position_bias.valid() ? &position_bias.value() : nullptr;
    for (Index h = 0; h < heads; ++h) {
      options_.probe->records.push_back({prefix, h, detail::attention_probs(q.value(), k.value(), bias, mask, h, hd)});
    }
  }
  return linear(o, prefix + ".wo", biases ? prefix + ".bo" : "");
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::vit(const Tensor<Scalar>& image) {
  const auto& vc = config_.vit;
  auto patches = patchify(image, vc.patch_size);
  const Index grid = image.dim(0) / vc.patch_size;
  auto pos = graph_["vit.pos"];
  if (pos.dim(0) != grid || pos.dim(1) != grid) {
    throw ShapeError("vit_forward: positional grid is " + std::to_string(pos.dim(0)) + "x" + std::to_string(pos.dim(1)) +
                     " but a " + std::to_string(image.dim(0)) + "px image has a " + std::to_string(grid) + "x" +
                     std::to_string(grid) + " patch grid; call resize_positional_embeddings first");
  }
  auto x = linear(graph_.constant(std::move(patches)), "vit.patch.w", "vit.patch.b");
  x = add(x, reshape(pos, {grid * grid, pos.dim(2)}));
  for (int i = 0; i < vc.depth; ++i) {
    const auto pre = block("vit", i);
    auto h = norm(x, pre + ".ln1");
    x = add(x, drop(mha(h, h, pre + ".attn", vc.heads, true, {}, {})));
    h = norm(x, pre + ".ln2");
    x = add(x, drop(linear(gelu(linear(h, pre + ".mlp.w1", pre + ".mlp.b1")), pre + ".mlp.w2", pre + ".mlp.b2")));
  }
  return norm(x, "vit.ln_f");
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::project(const Var<Scalar>& vit_features) {
  return linear(vit_features, "projector.w", "projector.b");
}

template <typename Scalar>
typename PaliGraph<Scalar>::Encoded PaliGraph<Scalar>::encode(const std::vector<int>& text, const Var<Scalar>& visual) {
  const auto& ec = config_.encdec;
  if (static_cast<int>(text.size()) > ec.max_text_len) {
    throw std::length_error("encode_multimodal: text length " + std::to_string(text.size()) + " exceeds max_text_len " +
                            std::to_string(ec.max_text_len));
  }
  if (visual.value().rank() != 2 || visual.dim(1) != ec.d_model) {
    throw_shape_error("encode_multimodal", visual.shape(), Shape{visual.value().rows(), ec.d_model});
  }
  Var<Scalar> x = visual;
  if (!text.empty()) x = concat<Scalar>({visual, embedding(graph_["encdec.embed"], text)}, 0);
  const Index len = x.dim(0);
  std::vector<bool> padding(static_cast<std::size_t>(visual.dim(0)), false);
  for (int t : text) padding.push_back(t == kPadId);
  const auto mask = key_padding_mask<Scalar>(len, padding);
  auto bias = relative_position_bias(graph_["encdec.enc.rel_bias"], len, len, true, ec.rel_max_distance);
  for (int i = 0; i < ec.enc_layers; ++i) {
    const auto pre = block("encdec.enc", i);
    auto h = norm(x, pre + ".ln1");
    x = add(x, drop(mha(h, h, pre + ".attn", ec.heads, false, bias, mask)));
    h = norm(x, pre + ".ln2");
    x = add(x, drop(linear(gelu(linear(h, pre + ".ffn.w1")), pre + ".ffn.w2")));
  }
  return {norm(x, "encdec.enc.ln_f"), std::move(padding)};
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::decode(const Encoded& encoded, const std::vector<int>& decoder_inputs) {
  const auto& ec = config_.encdec;
  const auto len = static_cast<Index>(decoder_inputs.size());
  if (len == 0) throw std::invalid_argument("decode: empty decoder input");
  if (len > ec.max_text_len) {
    throw std::length_error("decode: length " + std::to_string(len) + " exceeds max_text_len " +
                            std::to_string(ec.max_text_len));
  }
  auto embed = graph_["encdec.embed"];
  auto y = embedding(embed, decoder_inputs);
  const auto self_mask = causal_mask<Scalar>(len);
  const auto cross_mask = key_padding_mask<Scalar>(len, encoded.key_padding);
  auto bias = relative_position_bias(graph_["encdec.dec.rel_bias"], len, len, false, ec.rel_max_distance);
  for (int i = 0; i < ec.dec_layers; ++i) {
    const auto pre = block("encdec.dec", i);
    auto h = norm(y, pre + ".ln1");
    y = add(y, drop(mha(h, h, pre + ".self", ec.heads, false, bias, self_mask)));
    h = norm(y, pre + ".ln2");
    y = add(y, drop(mha(h, encoded.states, pre + ".cross", ec.heads, false, {}, cross_mask)));
    h = norm(y, pre + ".ln3");
    y = add(y, drop(linear(gelu(linear(h, pre + ".ffn.w1")), pre + ".ffn.w2")));
  }
  y = norm(y, "encdec.dec.ln_f");
  Var<Scalar> logits = ec.tie_embeddings
                           ? scale(matmul_nt(y, embed), Scalar(1) / std::sqrt(static_cast<Scalar>(ec.d_model)))
                           : matmul(y, graph_["encdec.lm_head"]);
  if (options_.logit_shift != Scalar(0)) logits = add_constant(logits, options_.logit_shift);
  if (!options_.step_logit_shifts.empty()) {
    Tensor<Scalar> shifts(logits.value().shape());
    const auto n = std::min<Index>(shifts.rows(), static_cast<Index>(options_.step_logit_shifts.size()));
    for (Index t = 0; t < n; ++t) shifts.matrix().row(t).setConstant(options_.step_logit_shifts[static_cast<std::size_t>(t)]);
    logits = add(logits, graph_.constant(std::move(shifts)));
  }
  return logits;
}

template <typename Scalar>
Var<Scalar> PaliGraph<Scalar>::loss(const Tensor<Scalar>& image, const std::vector<int>& text,
                                    const std::vector<int>& targets, Reduction reduction) {
  check_targets(targets, config_.encdec, "loss");
  auto encoded = encode(text, project(vit(image)));
  return cross_entropy(decode(encoded, shift_right(targets)), targets, kPadId, reduction);
}

template <typename Scalar>
Tensor<Scalar> vit_forward(const PaliModel<Scalar>& model, const Tensor<Scalar>& image) {
  Tape<Scalar> tape;
  Graph<Scalar> graph(tape, model.params, {""});
  PaliGraph<Scalar> pg(graph, model.config);
  return pg.vit(image).value();
}

template <typename Scalar>
VisualTokens<Scalar> visual_tokens(const PaliModel<Scalar>& model, const Tensor<Scalar>& image) {
  Tape<Scalar> tape;
  Graph<Scalar> graph(tape, model.params, {""});
  PaliGraph<Scalar> pg(graph, model.config);
  return {pg.project(pg.vit(image)).value(), static_cast<int>(image.dim(0))};
}

template <typename Scalar>
EncodedInput<Scalar> encode_multimodal(const PaliModel<Scalar>& model, const std::vector<int>& text_tokens,
                                       const VisualTokens<Scalar>& visual, const ForwardOptions<Scalar>& options) {
  Tape<Scalar> tape;
  Graph<Scalar> graph(tape, model.params, {""});
  PaliGraph<Scalar> pg(graph, model.config, options);
  auto enc = pg.encode(text_tokens, tape.constant(visual.tokens));
  return {enc.states.value(), std::move(enc.key_padding)};
}

template <typename Scalar>
Tensor<Scalar> decode_teacher_forced(const PaliModel<Scalar>& model, const EncodedInput<Scalar>& encoded,
                                     const std::vector<int>& targets, const ForwardOptions<Scalar>& options) {
  check_targets(targets, model.config.encdec, "decode_teacher_forced");
  Tape<Scalar> tape;
  Graph<Scalar> graph(tape, model.params, {""});
  PaliGraph<Scalar> pg(graph, model.config, options);
  typename PaliGraph<Scalar>::Encoded enc{tape.constant(encoded.states), encoded.key_padding};
  return pg.decode(enc, shift_right(targets)).value();
}

template <typename Scalar>
DecoderSession<Scalar>::DecoderSession(const PaliModel<Scalar>& model, const Tensor<Scalar>& image,
                                       const std::vector<int>& prompt, ForwardOptions<Scalar> options)
    : model_(model), options_(options) {
  encoded_ = encode_multimodal(model, prompt, visual_tokens(model, image), options_);
}

template <typename Scalar>
Tensor<Scalar> DecoderSession<Scalar>::log_probs(const std::vector<int>& tokens) const {
  Tape<Scalar> tape;
  Graph<Scalar> graph(tape, model_.params, {""});
  PaliGraph<Scalar> pg(graph, model_.config, options_);
  typename PaliGraph<Scalar>::Encoded enc{tape.constant(encoded_.states), encoded_.key_padding};
  std::vector<int> inputs;
  inputs.reserve(tokens.size() + 1);
  inputs.push_back(kPadId);
  inputs.insert(inputs.end(), tokens.begin(), tokens.end());
  return log_softmax(pg.decode(enc, inputs).value());
}

template <typename Scalar>
typename Tensor<Scalar>::Vector DecoderSession<Scalar>::next_log_probs(const std::vector<int>& prefix) const {
  const auto lp = log_probs(prefix);
  return lp.matrix().row(lp.rows() - 1).transpose();
}

namespace {

template <typename Vec>
int argmax_lowest(const Vec& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

template <typename Scalar>
struct Hypothesis {
  std::vector<int> tokens;
  Scalar score = 0;
};

// Higher score first; ties resolved by lexicographically smaller tokens.
template <typename Scalar>
bool ranks_before(const Hypothesis<Scalar>& a, const Hypothesis<Scalar>& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

template <typename Scalar>
std::vector<int> generate(const DecoderSession<Scalar>& session, const DecodeMode& mode, int max_len) {
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");
  max_len = std::min(max_len, session.model().config.encdec.max_text_len);
  if (mode.kind == DecodeMode::Kind::greedy) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
      const int tok = argmax_lowest(session.next_log_probs(out));
      out.push_back(tok);
      if (tok == kEosId) break;
    }
    return out;
  }

  if (mode.beam_size < 1) throw std::invalid_argument("generate: beam size must be >= 1");
  const auto k = static_cast<std::size_t>(mode.beam_size);
  std::vector<Hypothesis<Scalar>> live{{{}, Scalar(0)}};
  std::vector<Hypothesis<Scalar>> completed;
  for (int step = 0; step < max_len && !live.empty(); ++step) {
    struct Expansion {
      std::size_t parent;
      int token;
      Scalar score;
    };
    std::vector<Expansion> expansions;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto lp = session.next_log_probs(live[h].tokens);
      for (Index v = 0; v < lp.size(); ++v) expansions.push_back({h, static_cast<int>(v), live[h].score + lp[v]});
    }
    // live is kept sorted, so (parent, token) order is lexicographic order
    // of the extended sequences
    auto before = [&](const Expansion& a, const Expansion& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = live[a.parent].tokens;
      const auto& tb = live[b.parent].tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(k, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep), expansions.end(), before);
    std::vector<Hypothesis<Scalar>> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hypothesis<Scalar> h{live[expansions[i].parent].tokens, expansions[i].score};
      h.tokens.push_back(expansions[i].token);
      if (h.tokens.back() == kEosId || static_cast<int>(h.tokens.size()) == max_len) {
        completed.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    std::sort(next.begin(), next.end(), ranks_before<Scalar>);
    live = std::move(next);
    if (!completed.empty() && !live.empty()) {
      const auto best = std::min_element(completed.begin(), completed.end(), ranks_before<Scalar>);
      // scores only decrease as hypotheses grow
      if (best->score > live.front().score) break;
    }
  }
  if (completed.empty()) return live.front().tokens;
  return std::min_element(completed.begin(), completed.end(), ranks_before<Scalar>)->tokens;
}

template <typename Scalar>
std::vector<int> generate(const PaliModel<Scalar>& model, const Tensor<Scalar>& image, const std::vector<int>& prompt,
                          const DecodeMode& mode, int max_len, const ForwardOptions<Scalar>& options) {
  DecoderSession<Scalar> session(model, image, prompt, options);
  return generate(session, mode, max_len);
}

template <typename Scalar>
Scalar sequence_log_prob(const DecoderSession<Scalar>& session, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("sequence_log_prob: empty sequence");
  auto eos = std::find(tokens.begin(), tokens.end(), kEosId);
  if (eos != tokens.end() && std::any_of(eos, tokens.end(), [](int t) { return t != kEosId; })) {
    return -std::numeric_limits<Scalar>::infinity();
  }
  const std::vector<int> scored(tokens.begin(), eos == tokens.end() ? tokens.end() : eos + 1);
  const std::vector<int> context(scored.begin(), scored.end() - 1);
  const auto lp = session.log_probs(context);
  Scalar total = 0;
  for (std::size_t t = 0; t < scored.size(); ++t) total += lp.matrix()(static_cast<Index>(t), scored[t]);
  return total;
}

template <typename Scalar>
Scalar score_candidate(const DecoderSession<Scalar>& session, const std::vector<int>& candidate) {
  if (candidate.empty() || candidate.back() != kEosId) {
    throw std::invalid_argument("score_candidate: candidate must be non-empty and end with EOS");
  }
  if (static_cast<int>(candidate.size()) > session.model().config.encdec.max_text_len) {
    throw std::length_error("score_candidate: candidate length " + std::to_string(candidate.size()) +
                            " exceeds max_text_len");
  }
  return sequence_log_prob(session, candidate);
}

template <typename Scalar>
Scalar score_candidate(const PaliModel<Scalar>& model, const Tensor<Scalar>& image, const std::vector<int>& prompt,
                       const std::vector<int>& candidate, const ForwardOptions<Scalar>& options) {
  DecoderSession<Scalar> session(model, image, prompt, options);
  return score_candidate(session, candidate);
}

template <typename Scalar>
PaliModel<Scalar> resize_positional_embeddings(const PaliModel<Scalar>& model, int new_resolution) {
  const int patch = model.config.vit.patch_size;
  if (new_resolution <= 0 || new_resolution % patch != 0) {
    throw ShapeError("resize_positional_embeddings: resolution " + std::to_string(new_resolution) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  PaliModel<Scalar> out = model;
  out.config.vit.image_resolution = new_resolution;
  const Index grid = new_resolution / patch;
  auto& pos = out.params.value("vit.pos");
  pos = bilinear_resize_grid(pos, grid, grid);
  return out;
}

#define PALI_INSTANTIATE_MODEL(S)                                                                                    \
  template struct PaliModel<S>;                                                                                      \
  template class PaliGraph<S>;                                                                                       \
  template class DecoderSession<S>;                                                                                  \
  template Tensor<S> patchify(const Tensor<S>&, int);                                                                \
  template Tensor<S> vit_forward(const PaliModel<S>&, const Tensor<S>&);                                             \
  template VisualTokens<S> visual_tokens(const PaliModel<S>&, const Tensor<S>&);                                     \
  template EncodedInput<S> encode_multimodal(const PaliModel<S>&, const std::vector<int>&, const VisualTokens<S>&,   \
                                             const ForwardOptions<S>&);                                              \
  template Tensor<S> decode_teacher_forced(const PaliModel<S>&, const EncodedInput<S>&, const std::vector<int>&,     \
                                           const ForwardOptions<S>&);                                                \
  template std::vector<int> generate(const DecoderSession<S>&, const DecodeMode&, int);                              \
  template std::vector<int> generate(const PaliModel<S>&, const Tensor<S>&, const std::vector<int>&,                 \
                                     const DecodeMode&, int, const ForwardOptions<S>&);                              \
  template S sequence_log_prob(const DecoderSession<S>&, const std::vector<int>&);                                   \
  template S score_candidate(const DecoderSession<S>&, const std::vector<int>&);                                     \
  template S score_candidate(const PaliModel<S>&, const Tensor<S>&, const std::vector<int>&,                         \
                             const std::vector<int>&, const ForwardOptions<S>&);                                     \
  template PaliModel<S> resize_positional_embeddings(const PaliModel<S>&, int);

PALI_INSTANTIATE_MODEL(double)
PALI_INSTANTIATE_MODEL(float)

#undef PALI_INSTANTIATE_MODEL

}  // namespace pali
