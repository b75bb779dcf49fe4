#pragma once

#include "mfrflow/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfrflow {

/// Bad key, bad value or malformed configuration line.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Precision { float32, float64 };

struct TrainConfig {
  double learning_rate = 4e-4;
  /// Steps over which the rate decays linearly to zero; 0 means `steps`.
  int decay_steps = 0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 4;
  int steps = 2000;
  double clip_norm = 1.0;
  LossWeighting loss;
  int eval_every = 500;
  int checkpoint_every = 0;
  /// Samples at the end of the dataset held out for evaluation.
  int val_count = 16;

  void validate() const;
  int effective_decay_steps() const { return decay_steps > 0 ? decay_steps : steps; }
};

struct GradcheckConfig {
  int size = 64;
  double eps = 1e-5;
  int coordinates = 64;
  double tolerance = 1e-5;
  int iterations = 2;
  std::string regime = "occluding";

  void validate() const;
};

struct RunConfig {
  Precision precision = Precision::float32;
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  GradcheckConfig gradcheck;

  void validate() const;
};

/// Applies one "key=value" assignment.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Parses key=value lines on top of the defaults. Blank lines and lines
/// starting with '#' are ignored. Unknown keys are rejected.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key in a fixed order; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace mfrflow
