#pragma once

#include <string>

#include "saunet/tensor.hpp"

namespace saunet {

/// Portable tensor file: magic "SGT1", u32 ndim (<= 4), u32 dims[], then a
/// little-endian f32 payload. Round-trips bit-exactly.
void sgt_write(const std::string& path, const Tensor<float>& t);
Tensor<float> sgt_read(const std::string& path);

}  // namespace saunet
