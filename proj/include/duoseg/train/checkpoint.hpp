#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duoseg/core/tensor.hpp"

namespace duoseg {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// On-disk model state. Layout (all integers little-endian):
//   magic "DDLF", u32 version (1), u32 metadata byte length, metadata
//   (UTF-8 key=value lines), u32 tensor count, then per tensor:
//   u16 name length, name, u8 dtype (0 = f32), u8 rank, rank x u32 extents,
//   payload.
struct Checkpoint {
    std::string metadata;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    // First value for `key` in the metadata lines, or empty.
    std::string value(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace duoseg
