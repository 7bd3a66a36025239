#pragma once

// Checkpoint container, all integers and floats little-endian:
//   blob    version string "mvcnet-ckpt-v1"
//   blob    network spec as compact JSON
//   u64     rng seed
//   u32     tensor count
//   tensor* blob id, u32 rows, u32 cols, rows*cols f64 (column-major)
// A blob is a u32 byte length followed by the bytes.

#include <filesystem>
#include <string>
#include <string_view>

#include "mvcnet/network.hpp"

namespace mvcnet {

inline constexpr std::string_view kCheckpointVersion = "mvcnet-ckpt-v1";

std::string encode_checkpoint(const Network& network);
/// Throws ValidationError on a version mismatch, naming both versions.
Network decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Network& network, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace mvcnet
