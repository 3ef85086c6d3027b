#pragma once

#include <string>
#include <utility>
#include <vector>

#include "laneatt/tensor.hpp"

namespace laneatt {

/// Named tensors in a fixed order; what save/load round-trips.
using CheckpointEntries = std::vector<std::pair<std::string, Tensor>>;

/// Binary checkpoint layout (all integers and doubles little-endian):
///   "LATT" magic, u32 format version (currently 1), u32 entry count,
///   then per entry: u16 name length, name bytes, u8 rank,
///   u64 extent per dimension, f64 payload in row-major order.
void save_checkpoint(const std::string& path, const CheckpointEntries& entries);

/// Throws DataError on unreadable, truncated or malformed files.
CheckpointEntries load_checkpoint(const std::string& path);

}  // namespace laneatt
