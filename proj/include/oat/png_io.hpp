#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oat/image.hpp"

namespace oat {

/// Lossless 8-bit RGB PNG. Encoding quantizes [0,1] scalars to the nearest
/// 8-bit level; decode maps back as v/255. Fixed zlib settings keep the byte
/// stream reproducible for identical pixels.
std::vector<uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<uint8_t>& bytes);

void write_png_file(const std::string& path, const Image& img);
Image read_png_file(const std::string& path);

}  // namespace oat
