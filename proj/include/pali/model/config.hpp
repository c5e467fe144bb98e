#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace pali {

/// Config validation failure; `field` is a dotted path such as "vit.heads".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// A required input file or directory is missing or unreadable.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;

struct ViTConfig {
  int width = 64;
  int depth = 2;
  int mlp_dim = 128;
  int heads = 4;
  int patch_size = 14;
  int image_resolution = 56;

  int grid_size() const { return image_resolution / patch_size; }
  int num_patches() const { return grid_size() * grid_size(); }
  void validate(const std::string& path = "vit") const;

  /// "toy", or the large shapes "g/14", "G/14", "e/14" (validation only).
  static ViTConfig preset(const std::string& name);
};

struct EncDecConfig {
  int d_model = 64;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ffn_dim = 128;
  int vocab_size = 2048;
  int max_text_len = 64;
  int num_sentinels = 100;
  bool tie_embeddings = false;
  int rel_buckets = 32;
  int rel_max_distance = 128;
  double layer_norm_eps = 1e-6;

  void validate(const std::string& path = "encdec") const;
  static EncDecConfig preset(const std::string& name);
};

struct ModelConfig {
  ViTConfig vit;
  EncDecConfig encdec;

  void validate() const {
    vit.validate("model.vit");
    encdec.validate("model.encdec");
  }

  /// "toy" (the desk-scale default) or "toy-512" (vocab 512).
  static ModelConfig preset(const std::string& name);
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);
void to_json(nlohmann::json& j, const EncDecConfig& c);
void from_json(const nlohmann::json& j, EncDecConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace pali
