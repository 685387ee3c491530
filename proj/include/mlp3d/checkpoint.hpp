#pragma once

// Single-file checkpoint container:
//
//   "MLP3DCK1" | u64 manifest bytes | manifest JSON | tensor blobs
//
// The manifest records format_version, the network spec, pool_group, dtype
// and for every canonical parameter path its shape plus the byte offset and
// length of its blob, counted from the first byte after the manifest. Blobs
// are raw little-endian IEEE-754 values.

#include <filesystem>

#include "json.hpp"
#include "mlp3d/network.hpp"

namespace mlp3d {

inline constexpr int kCheckpointVersion = 1;

template <class Real>
struct Checkpoint {
  NetworkSpec spec;
  ModelParams<Real> params;
};

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const ModelParams<Real>& params);

// Rebuilds the parameter structure from the stored spec and fills it. The
// stored tensor set must match that structure name for name and shape for
// shape; the dtype must match Real.
template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace mlp3d
