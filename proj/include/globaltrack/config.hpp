#pragma once

#include <string>
#include <vector>

#include "globaltrack/modelcore.hpp"
#include "globaltrack/tracker.hpp"
#include "globaltrack/training.hpp"

namespace gt {

/// Everything the CLI needs, grouped by dotted namespace in the flat
/// key=value config format ("model.channels=256", "train.lr=0.01", ...).
struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  TrackerConfig tracker;
  std::string data_root;       // sequence dataset directory
  std::string image_manifest;  // optional detection-style manifest
  double image_probability = 0.0;  // mixture weight of the image dataset
};

// Small backbone, small images, short schedule: runs on one CPU core.
AppConfig desk_config();

// Sets one key; throws std::invalid_argument for unknown keys (the message
// lists every valid key) or unparsable values.
void apply_override(AppConfig& config, const std::string& key, const std::string& value);

// "key=value" per line, '#' comments, blank lines ignored; each line is
// applied as an override onto the given config.
void apply_config_file(AppConfig& config, const std::string& path);

// apply_config_file starting from desk_config().
AppConfig parse_config_file(const std::string& path);

std::vector<std::string> config_keys();

// Full key=value serialization (one per line) used as the checkpoint echo.
std::string config_echo(const AppConfig& config);

}  // namespace gt
