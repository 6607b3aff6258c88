#pragma once

#include <filesystem>
#include <string>

#include "pfdfl/dual_model.hpp"

namespace pfdfl {

/// Binary checkpoint, little-endian throughout:
///   "PFDL" | u32 version | u32 n + model config JSON (n bytes)
///   | u32 count | count x (u32 n + name, u32 rank, rank x u64 dim,
///   u64 payload offset) | payload of f64 values.
/// Offsets are in bytes from the start of the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const DualModel& model);
void save_checkpoint(const DualModel& model, const std::filesystem::path& path);

/// Rebuilds the model from the embedded configuration and loads its values.
/// FormatError on bad magic, version or truncation.
DualModel load_checkpoint(const std::filesystem::path& path);
DualModel deserialize_checkpoint(const std::string& bytes);

/// Loads values into an existing model. LoadError names the first tensor
/// that is missing or has a different shape.
void load_checkpoint_into(DualModel& model, const std::filesystem::path& path);
void load_checkpoint_into(DualModel& model, const std::string& bytes);

}  // namespace pfdfl
