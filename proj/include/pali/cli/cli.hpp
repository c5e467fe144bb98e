#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "pali/model/config.hpp"
#include "pali/tasks/corpus.hpp"
#include "pali/training/finetune.hpp"
#include "pali/training/trainer.hpp"

namespace pali {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitMissingArtifact = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitNumeric = 4;

struct EvalSpec {
  /// Any of "vqa", "caption", "classify".
  std::vector<std::string> tasks = {"vqa", "caption", "classify"};
  /// 1 decodes greedily; k > 1 runs beam search of width k.
  int beam = 1;

  void validate(const std::string& path = "eval") const;
};

/// Everything a pipeline stage needs besides its input files. The top-level
/// seed drives corpus generation, initialization, sampling and dropout.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string model_preset = "toy";
  ModelConfig model = ModelConfig::preset("toy");
  CorpusConfig corpus;
  PhaseConfig phase1 = PhaseConfig::frozen_vision(56, 1000, 8);
  PhaseConfig phase2 = PhaseConfig::high_res(112, 100, 8);
  FinetuneConfig finetune = default_finetune();
  /// Size of the generated fine-tuning set.
  int finetune_examples = 256;
  EvalSpec eval;

  void validate() const;

  /// Divides phase and fine-tuning step counts (and warmups) by `divisor`,
  /// keeping at least one step each.
  void divide_steps(int divisor);

  static FinetuneConfig default_finetune();
};

/// Layout: {seed, model: {preset, vit, encdec}, corpus, pretrain: {phase1,
/// phase2}, finetune: {..., examples}, eval}. Missing fields keep defaults;
/// unknown top-level fields and malformed values raise ConfigError.
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Throws ArtifactError when the file is missing, ConfigError when it does
/// not parse or validate.
RunConfig load_run_config(const std::string& path);

/// Entry point shared by the `pali` binary and the tests. `args` excludes
/// the program name. Returns one of the kExit* codes; failures print a single
/// "error[<category>] <detail>" line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pali
