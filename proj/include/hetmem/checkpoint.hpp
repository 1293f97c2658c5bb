#pragma once

#include <filesystem>

#include "hetmem/model.hpp"

namespace hetmem {

// Checkpoint container, all integers little-endian:
//
//   magic        8 bytes  "HMTXLCK\0"
//   version      u32      (currently 1)
//   config_len   u64
//   config       config_len bytes of model.* / memory.* text
//   array_count  u64
//   per array:
//     name_len u32, name bytes
//     rank u32, dims u64 x rank
//     values   fp32 x prod(dims)
//
// Arrays appear in ModelParams::for_each order and are matched by name on
// load. Reload is bit-exact.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams<float>& params);

// Throws IoError for unreadable, truncated or mismatched files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hetmem
