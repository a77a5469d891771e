#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace partscope {

// Binary PGM (P5) and PPM (P6), 8-bit, maxval 255. Lossless and diffable with
// standard tools; all dataset rasters go through these.

struct GrayImage8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

struct RgbImage8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB
};

void write_pgm(const std::filesystem::path& path, const GrayImage8& img);
GrayImage8 read_pgm(const std::filesystem::path& path);

void write_ppm(const std::filesystem::path& path, const RgbImage8& img);
RgbImage8 read_ppm(const std::filesystem::path& path);

}  // namespace partscope
