#include "pali/model/config.hpp"

namespace pali {

namespace {

void require_positive(int v, const std::string& field) {
  if (v <= 0) throw ConfigError(field, "must be positive, got " + std::to_string(v));
}

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void ViTConfig::validate(const std::string& path) const {
  require_positive(width, path + ".width");
  require_positive(depth, path + ".depth");
  require_positive(mlp_dim, path + ".mlp_dim");
  require_positive(heads, path + ".heads");
  require_positive(patch_size, path + ".patch_size");
  require_positive(image_resolution, path + ".image_resolution");
  if (image_resolution % patch_size != 0) {
    throw ConfigError(path + ".image_resolution", "must be divisible by patch_size " + std::to_string(patch_size));
  }
  if (width % heads != 0) throw ConfigError(path + ".width", "must be divisible by heads " + std::to_string(heads));
  if (grid_size() < 2) throw ConfigError(path + ".image_resolution", "must give at least a 2x2 patch grid");
}

ViTConfig ViTConfig::preset(const std::string& name) {
  // width, depth, mlp, heads, patch, resolution
  if (name == "toy") return {64, 2, 128, 4, 14, 56};
  if (name == "g/14") return {1408, 40, 6144, 16, 14, 224};
  if (name == "G/14") return {1664, 48, 8192, 16, 14, 224};
  if (name == "e/14") return {1792, 56, 15360, 16, 14, 224};
  throw ConfigError("vit.preset", "unknown preset '" + name + "' (known: toy, g/14, G/14, e/14)");
}

void EncDecConfig::validate(const std::string& path) const {
  require_positive(d_model, path + ".d_model");
  require_positive(enc_layers, path + ".enc_layers");
  require_positive(dec_layers, path + ".dec_layers");
  require_positive(heads, path + ".heads");
  require_positive(ffn_dim, path + ".ffn_dim");
  require_positive(max_text_len, path + ".max_text_len");
  require_positive(rel_buckets, path + ".rel_buckets");
  require_positive(rel_max_distance, path + ".rel_max_distance");
  if (num_sentinels < 0) throw ConfigError(path + ".num_sentinels", "must be non-negative");
  if (vocab_size <= num_sentinels + 2) {
    throw ConfigError(path + ".vocab_size", "must exceed num_sentinels + 2 special tokens");
  }
  if (d_model % heads != 0) throw ConfigError(path + ".d_model", "must be divisible by heads " + std::to_string(heads));
  if (!(layer_norm_eps > 0)) throw ConfigError(path + ".layer_norm_eps", "must be positive");
}

EncDecConfig EncDecConfig::preset(const std::string& name) {
  if (name == "toy") return EncDecConfig{};
  if (name == "toy-512") {
    EncDecConfig c;
    c.vocab_size = 512;
    return c;
  }
  throw ConfigError("encdec.preset", "unknown preset '" + name + "' (known: toy, toy-512)");
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "toy") return {ViTConfig::preset("toy"), EncDecConfig::preset("toy")};
  if (name == "toy-512") return {ViTConfig::preset("toy"), EncDecConfig::preset("toy-512")};
  throw ConfigError("model.preset", "unknown preset '" + name + "' (known: toy, toy-512)");
}

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = {{"width", c.width},       {"depth", c.depth},           {"mlp_dim", c.mlp_dim},
       {"heads", c.heads},       {"patch_size", c.patch_size}, {"image_resolution", c.image_resolution}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  read_optional(j, "width", c.width);
  read_optional(j, "depth", c.depth);
  read_optional(j, "mlp_dim", c.mlp_dim);
  read_optional(j, "heads", c.heads);
  read_optional(j, "patch_size", c.patch_size);
  read_optional(j, "image_resolution", c.image_resolution);
}

void to_json(nlohmann::json& j, const EncDecConfig& c) {
  j = {{"d_model", c.d_model},
       {"enc_layers", c.enc_layers},
       {"dec_layers", c.dec_layers},
       {"heads", c.heads},
       {"ffn_dim", c.ffn_dim},
       {"vocab_size", c.vocab_size},
       {"max_text_len", c.max_text_len},
       {"num_sentinels", c.num_sentinels},
       {"tie_embeddings", c.tie_embeddings},
       {"rel_buckets", c.rel_buckets},
       {"rel_max_distance", c.rel_max_distance},
       {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, EncDecConfig& c) {
  read_optional(j, "d_model", c.d_model);
  read_optional(j, "enc_layers", c.enc_layers);
  read_optional(j, "dec_layers", c.dec_layers);
  read_optional(j, "heads", c.heads);
  read_optional(j, "ffn_dim", c.ffn_dim);
  read_optional(j, "vocab_size", c.vocab_size);
  read_optional(j, "max_text_len", c.max_text_len);
  read_optional(j, "num_sentinels", c.num_sentinels);
  read_optional(j, "tie_embeddings", c.tie_embeddings);
  read_optional(j, "rel_buckets", c.rel_buckets);
  read_optional(j, "rel_max_distance", c.rel_max_distance);
  read_optional(j, "layer_norm_eps", c.layer_norm_eps);
}

void to_json(nlohmann::json& j, const ModelConfig& c) { j = {{"vit", c.vit}, {"encdec", c.encdec}}; }

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("preset")) c = ModelConfig::preset(j.at("preset").get<std::string>());
  if (j.contains("vit")) j.at("vit").get_to(c.vit);
  if (j.contains("encdec")) j.at("encdec").get_to(c.encdec);
}

}  // namespace pali
