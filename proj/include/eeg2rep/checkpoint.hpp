#pragma once

#include "eeg2rep/config.hpp"
#include "eeg2rep/training.hpp"

#include <cstdint>
#include <filesystem>

namespace eeg2rep {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Json run_config;  // snapshot of the resolved run configuration
  PretrainConfig pretrain;
  TrainerState state;
};

/// Binary layout: magic, version, config sections as JSON text, named
/// tensors (parameters, target encoder, optimizer moments), scalar training
/// state, RNG state, checksum. Written to a temporary file and renamed.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws IoError on unreadable, corrupt or version-mismatched files; no
/// partially loaded state escapes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eeg2rep
