#pragma once

#include <string>

#include "mira/pipeline.hpp"

namespace mira {

inline constexpr int kCheckpointFormatVersion = 1;

// Container layout: u64 manifest length, manifest JSON (UTF-8), then tensor
// blobs in manifest order. Each blob carries a header (magic "MIRA", u32
// rank, u32 dims[rank]) followed by little-endian 64-bit floats.
void save_checkpoint(const ModelState& st, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace mira
