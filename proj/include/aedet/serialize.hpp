#pragma once

// AEDM tensor container: little-endian, magic "AEDM", u32 format version,
// u32 tensor count, then per tensor: u32 name length, UTF-8 name, u32 rank,
// u32 extents, raw float32 data.

#include <string>
#include <utility>
#include <vector>

#include "aedet/tensor.hpp"

namespace aedet {

inline constexpr uint32_t kAedmVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_aedm(const std::string& path, const NamedTensors& tensors);
NamedTensors read_aedm(const std::string& path);

}  // namespace aedet
