#pragma once

// Dataset container "mvt-v1", all integers and floats little-endian:
//   4 bytes  magic "MVT1"
//   header   eight fields, each a u32 byte length followed by the payload:
//              manifold     u8 kind (0 spd, 1 sphere), u32 n
//              dims         u32 rank, rank x u32 extent
//              channels     u32
//              samples      u64 count
//              task         u8 (0 image class, 1 regression, 2 sequence angle)
//              seed         u64
//              classes      u32 (0 for regression)
//              sigma        f64
//   sample*  f64 target, f64 clean target, then sites x channels x coord_size f64
//            point coordinates, site-major (row-major sites, then channel)

#include <filesystem>
#include <string>
#include <string_view>

#include "mvcnet/synth.hpp"

namespace mvcnet {

inline constexpr std::string_view kDatasetMagic = "MVT1";

std::string encode_dataset(const Dataset& dataset);
/// Validates header fields and every point; throws ValidationError.
Dataset decode_dataset(std::string_view bytes);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mvcnet
