#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "roiedit/networks.hpp"

namespace roiedit {

inline constexpr int kCheckpointVersion = 1;

enum class Phase { smn, smpn };

std::string phase_name(Phase p);
Phase parse_phase(const std::string& name);

struct CheckpointManifest {
  int version = kCheckpointVersion;
  ModelConfig model;
  Phase phase = Phase::smn;
  std::int64_t step = 0;

  bool operator==(const CheckpointManifest&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  CheckpointManifest manifest;
  AutoencoderParams autoencoder;
  DiscriminatorParams discriminators;
};

/// Writes <dir>/manifest.json and <dir>/tensors/<name>.f32 (little-endian float32, row-major).
void save_checkpoint(const std::filesystem::path& dir, const AutoencoderParams& ae, const DiscriminatorParams& disc,
                     const CheckpointManifest& manifest);

/// Loaded parameters are frozen (no gradient tracking).
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Manifest only, without tensor payloads.
CheckpointManifest read_manifest(const std::filesystem::path& dir);

}  // namespace roiedit
