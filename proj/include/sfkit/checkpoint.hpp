#pragma once

#include <string>

#include "sfkit/grad.hpp"

namespace sfk::grad {

// Checkpoint file "SFKC": magic, version u32=1, tensor count u32; per tensor
// name (u16 len + UTF-8), trainable u8, rank u8, dims u32×rank, values as
// 32-bit little-endian floats. Values are widened to 64-bit on load.
void save_checkpoint(const ParameterStore& params, const std::string& path);
ParameterStore load_checkpoint(const std::string& path);

}  // namespace sfk::grad
