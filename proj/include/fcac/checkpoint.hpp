#pragma once

#include <cstdint>
#include <string>

#include "fcac/classifier.hpp"
#include "fcac/embedder.hpp"

namespace fcac::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  embedder::EmbedderParams params;
  classifier::StochasticClassifierState state;
  std::uint64_t run_seed = 0;
  std::int32_t completed_sessions = 0;  // sessions already trained, base = 1
};

// Binary, little-endian: magic + version + config digest header, a named
// 64-bit-float tensor table (backbone, projection head, classifier state),
// and a trailing FNV-1a checksum over everything before it. Round-trips are
// bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t config_digest(const embedder::EmbedderConfig& cfg);

}  // namespace fcac::checkpoint
