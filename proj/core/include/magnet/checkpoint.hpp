#pragma once

// Versioned binary checkpoint: "MGNT" magic, format version, JSON header
// (configs, training progress, history) and four parameter sections (current
// weights, best weights, Adam moments). A text manifest sits next to it.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "magnet/train.hpp"

namespace magnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checksum of the canonical model and training configs, excluding the stopping
/// rule (max_epochs, patience); resumes require a match.
std::string config_checksum(const ModelConfig& model, const TrainConfig& train);

/// Writes `path` and `path` + ".manifest" (tensor names, shapes and checksums).
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

TrainState load_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint to continue training under the given configs; throws
/// CheckpointError if the stored config checksum differs. The stopping rule is
/// taken from `train` and re-evaluated.
TrainState resume_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const TrainConfig& train);

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);

}  // namespace magnet
