#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hetmem/model.hpp"

namespace hetmem {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 100;
  double clip_norm = 1.0;
  std::size_t lanes = 8;
  std::size_t max_steps = 2000;
  std::size_t valid_interval = 250;
  // Validation checks without improvement before stopping.
  std::size_t patience = 4;
  std::uint64_t seed = 1;
  // Bytes of the validation split scored at each check.
  std::size_t valid_prefix = 50000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Cosine decay floor as a fraction of learning_rate.
  double min_lr_ratio = 0.1;
  std::size_t log_interval = 10;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DataConfig {
  std::string path;
  double train_fraction = 0.9;
  double valid_fraction = 0.05;
  double test_fraction = 0.05;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Everything a run needs besides the seed override: one file, namespaced
/// keys (model.*, memory.*, train.*, data.*).
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses `key = value` lines; `#` starts a comment. Missing keys keep their
/// defaults, unknown keys and malformed values throw ConfigError. The memory
/// layer set is resolved and the whole config validated before returning.
ExperimentConfig parse_config(std::string_view text);

// Reads and parses a file; a relative data.path becomes an absolute path
// resolved against the file's folder.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text with every key, in a fixed order, with round-trip exact
/// number formatting.
std::string serialize(const ExperimentConfig& config);

// Only the model.* and memory.* keys.
std::string serialize_model(const ModelConfig& config);
ModelConfig parse_model(std::string_view text);

}  // namespace hetmem
