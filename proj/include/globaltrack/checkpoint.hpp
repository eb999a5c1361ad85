#pragma once

#include <string>

#include "globaltrack/modelcore.hpp"

namespace gt {

/// Checkpoint container: magic string, format version, a config echo, and
/// named parameter arrays stored as little-endian float32.
struct CheckpointCodec {
  static constexpr const char* kMagic = "GLOBALTRACK-CKPT";
  static constexpr uint32_t kVersion = 1;

  static void save(const std::string& path, const ParamStore& params,
                   const std::string& config_echo);
  // Loads values into an already-constructed store; throws
  // std::runtime_error on magic/version/name/shape mismatch.
  static void load(const std::string& path, ParamStore& params);
  static std::string read_config_echo(const std::string& path);
};

}  // namespace gt
