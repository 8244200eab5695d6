#pragma once

#include "eeg2rep/data.hpp"
#include "eeg2rep/evaluation.hpp"
#include "eeg2rep/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace eeg2rep {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::string source = "synthetic";  // synthetic | manifest
  std::string manifest;
  double sampling_rate = 128.0;
  SynthConfig synthetic;
  SplitSpec split;
};

struct RobustnessConfig {
  std::vector<NoiseKind> kinds{NoiseKind::gaussian, NoiseKind::dc_shift, NoiseKind::amplitude_scale,
                               NoiseKind::time_shift};
  std::vector<double> magnitudes{0.0, 0.25, 0.5, 0.75, 1.0};
};

struct EvaluationConfig {
  ProbeEncoder encoder = ProbeEncoder::context;
  int workers = 1;
  ProbeConfig probe;
  FineTuneConfig finetune;
  SweepGrid sweep;
  RobustnessConfig robustness;
};

/// Everything a command needs. Channel count and window length of `model`
/// come from the data and are filled in by resolve_model_shape().
struct RunConfig {
  std::string run_name = "eeg2rep";
  std::string output_dir = "runs";
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  EvaluationConfig evaluation;
};

void validate(const RunConfig& cfg);

Json to_json(const RunConfig& cfg);
/// Strict: unknown keys and wrong types throw ConfigError naming the key path.
RunConfig run_config_from_json(const Json& j);

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const PretrainConfig& cfg);
PretrainConfig pretrain_config_from_json(const Json& j);

/// Parses a config file; missing keys keep their defaults.
Json read_config_file(const std::filesystem::path& path);

/// Applies `a.b.c=value` to `j`. The value is parsed as JSON when possible
/// and taken as a string otherwise.
void apply_override(Json& j, std::string_view assignment);

/// Copies channels/length from the dataset into cfg.model.
void resolve_model_shape(RunConfig& cfg, const EegDataset& dataset);

}  // namespace eeg2rep
