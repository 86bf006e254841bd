#pragma once

#include "beltcrack/tensor.hpp"

#include <string>

namespace beltcrack {

// 3 x H x W RGB in [0,1].
using Image = Tensor<float>;

// Throws std::runtime_error naming the file when it is missing or unreadable.
Image read_image(const std::string& path);
// Writes 8-bit PNG/JPEG (by extension), creating parent directories.
void write_image(const std::string& path, const Image& image);

// Rounds to the nearest 8-bit level so that in-memory images equal what a
// write/read round trip yields.
void quantize_8bit(Image& image);

// Bilinear (area when shrinking) resize of every channel.
Image resize_image(const Image& image, Index height, Index width);

}  // namespace beltcrack
