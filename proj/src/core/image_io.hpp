#pragma once

#include <filesystem>

#include "core/image.hpp"

namespace spsd {

// 8-bit PNG. RGB, gray and palette files are decoded to RGB in [0, 1]; alpha
// is dropped.
Image read_png(const std::filesystem::path& path);

// Values are clamped to [0, 1] and quantized to 8 bits.
void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const GrayMap& map);

}  // namespace spsd
