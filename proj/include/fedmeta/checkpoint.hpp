#pragma once

#include <string>
#include <string_view>

#include "fedmeta/param_vector.hpp"

namespace fedmeta {

/// FMB1 container: magic "FMB1", u32 segment count, then per segment a
/// u32-length-prefixed UTF-8 name, u32 rank and u32 dims, then all values as
/// little-endian float32 in layout order.
std::string encode_checkpoint(const ParamVector& params);
ParamVector decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ParamVector& params);
ParamVector load_checkpoint(const std::string& path);

}  // namespace fedmeta
