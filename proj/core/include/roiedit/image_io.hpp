#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "roiedit/networks.hpp"
#include "roiedit/tensor.hpp"

namespace roiedit {

/// 8-bit interleaved raster, 1 (gray) or 3 (RGB) channels.
struct Raster8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> encode_png(const Raster8& raster);
/// Decodes to the requested channel count (1 or 3), converting as needed.
Raster8 decode_png(std::span<const std::uint8_t> bytes, int channels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Raster8 read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Raster8& raster);

ImageTensor to_image_tensor(const Raster8& rgb, const PixelNormalization& norm = {});
Raster8 to_raster(const ImageTensor& image, const PixelNormalization& norm = {});

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace roiedit
