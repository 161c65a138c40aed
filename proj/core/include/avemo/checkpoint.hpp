#pragma once

#include <string>

#include "json.hpp"

#include "avemo/optim.hpp"

namespace avemo {

/// Checkpoint file layout (stable across versions):
///   bytes 0..3   magic "AVCK"
///   bytes 4..11  uint64 little-endian manifest byte length
///   manifest     UTF-8 JSON: {"version":1, "config": <echo>,
///                "params":[{"name","group","shape","frozen"}, ...]}
///   payload      raw little-endian IEEE-754 doubles, concatenated in
///                manifest order
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config_echo);

/// Reads only the manifest's config echo.
nlohmann::json read_checkpoint_config(const std::string& path);

/// Loads values into an already-built store. Every manifest entry must match
/// an existing parameter's shape; group and frozen flags are restored.
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace avemo
