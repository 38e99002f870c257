#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfrf/diffmath/layers.hpp"

// Binary checkpoint:
//   "DFRF" | u32 version | u32 profile (0 = f32, 1 = f64)
//   | u64 n + n bytes config JSON | u64 n + n bytes RNG state
//   | u64 count | count x (u32 name length, name, u32 rank, rank x i64 extents, values)
// All integers and reals little-endian; values use the profile's width.

namespace dfrf::dataio {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
struct Checkpoint {
  std::string config_json;
  std::string rng_state;
  diffmath::ParamList<Real> tensors;
};

/// Atomic: writes a temporary file beside `path` and renames it into place.
template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& checkpoint);

/// Raises DataError: MissingFile, BadMagic, VersionMismatch, ProfileMismatch
/// (stored width differs from Real) or CorruptTable (truncated or
/// inconsistent contents).
template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

/// Numeric profile recorded in a checkpoint header.
diffmath::Profile checkpoint_profile(const std::filesystem::path& path);

}  // namespace dfrf::dataio
