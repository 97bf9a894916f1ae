#pragma once

#include <string>

#include "saunet/model.hpp"
#include "saunet/trainer.hpp"

namespace saunet {

/// One JSON document describing a full run: model + training + data paths.
/// Unknown keys are rejected so a config file cannot silently drift.
struct RunConfig {
  uint64_t seed = 7;
  bool seed_given = false;
  std::string data_root;
  ModelConfig model = ModelConfig::tiny();
  TrainConfig train;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string to_json() const;
};

/// Default seed resolution: explicit value > SAUNET_SEED env var > 7.
uint64_t resolve_seed(bool given, uint64_t value);

}  // namespace saunet
