#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"
#include "pali/model/config.hpp"
#include "pali/numerics.hpp"

namespace pali {

/// Model weights plus optional optimizer state and free-form metadata.
///
/// On disk: the 8-byte magic "PALICKPT", a little-endian u32 format version,
/// a little-endian u64 manifest length, a JSON manifest, then the raw
/// little-endian IEEE arrays in manifest order.
template <typename Scalar>
struct Checkpoint {
  ModelConfig config;
  ParamSet<Scalar> params;
  /// Optimizer slots keyed by name (e.g. "adafactor/<param>/row").
  std::map<std::string, Tensor<Scalar>> optimizer;
  std::int64_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& checkpoint);

/// Loads a checkpoint written with either float or double arrays, casting
/// to Scalar if needed. Throws ArtifactError when the file is missing and
/// std::runtime_error when it is malformed.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path);

/// Reads only the manifest (config, step, meta, array table).
nlohmann::json read_checkpoint_manifest(const std::string& path);

}  // namespace pali
