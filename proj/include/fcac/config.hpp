#pragma once

#include <string>

#include <json.hpp>

#include "fcac/datagen.hpp"
#include "fcac/protocol.hpp"

namespace fcac::config {

struct DatasetConfig {
  enum class Kind { kSynthetic, kManifest };
  Kind kind = Kind::kSynthetic;
  datagen::SyntheticSpec synthetic;
  std::string manifest_path;
};

// Mirrors every module config; loaded from a JSON file with environment and
// command-line overrides layered on top.
struct RunConfig {
  protocol::RunSettings settings;
  DatasetConfig dataset;
  std::string out_dir = "out";

  void validate() const;
};

RunConfig default_config();

// Partial overlay: only keys present in `j` are applied.
void apply_json(RunConfig& cfg, const nlohmann::json& j);

RunConfig load_config_file(const std::string& path);

// Full canonical echo of the effective configuration.
nlohmann::json to_json(const RunConfig& cfg);

// FNV-1a of the canonical dump, as fixed-width hex.
std::string config_digest(const RunConfig& cfg);

// Builds the dataset access point described by the config (synthesizes the
// manifest or loads it from disk).
datagen::ManifestClipProvider make_provider(const RunConfig& cfg);

}  // namespace fcac::config
