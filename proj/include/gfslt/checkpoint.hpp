#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfslt/params.hpp"

namespace gfslt {

// Serialized parameter store plus the run state needed for exact resume.
// File layout ("GFCK", little-endian): magic, u32 version, u64 config
// fingerprint, u64 compat fingerprint, u64 seed, u32 next_epoch, u32 flags,
// u32 tensor count; a manifest of (name, shape, byte offset) entries; then
// contiguous f32 payloads. Round trips are bitwise exact.
struct Checkpoint {
  std::uint64_t config_fingerprint = 0;
  std::uint64_t compat_fingerprint = 0;
  std::uint64_t seed = 0;       // run seed; with next_epoch this is the RNG state
  std::uint32_t next_epoch = 0;
  ParameterStore params;
  bool has_optimizer = false;
  std::vector<std::vector<float>> momentum;  // aligned with params order
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gfslt
