#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipetteloc/types.hpp"

namespace pipetteloc {

// Lossless 8-bit grayscale PNG. Intensities are quantized as round(v*255).
void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pixels,
                     int height, int width);

// Reads any grayscale-convertible PNG back to 8-bit gray.
std::vector<uint8_t> read_png_gray8(const std::string& path, int& height, int& width);

// Interleaved RGB rows, 8-bit.
void write_png_rgb8(const std::string& path, const std::vector<uint8_t>& pixels,
                    int height, int width);

// ImageGrid helpers: values are stored as k/255 so a write/read cycle is exact.
void write_image(const std::string& path, const ImageGrid& image);
ImageGrid read_image(const std::string& path);

}  // namespace pipetteloc
