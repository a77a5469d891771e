#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "partscope/tensor.hpp"

namespace partscope {

// RGB image, values in [0, 1], shape (3, H, W).
struct Image {
  Tensor data;
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

// Binary foreground mask; Omega = pixels with value 1.
struct ForegroundMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (std::uint8_t v : data) n += v;
    return n;
  }
};

// Per-pixel probability distribution over K parts, shape (K, H, W).
struct SoftMask {
  Tensor data;
  std::size_t parts() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

// Dense descriptor grid from a perceptual provider, shape (d, h, w).
struct FeatureMap {
  Tensor data;
  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

// Mask-weighted mean feature vector of one part occurrence.
struct PartDescriptor {
  std::vector<double> vector;
  int part_index = 0;
  int source_image = 0;
};

// Integer labels; kIgnore marks unscored pixels.
struct LabelGrid {
  static constexpr int kIgnore = -1;
  std::size_t height = 0, width = 0;
  std::vector<int> data;

  int at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  int& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
};

struct PixelLabel {
  std::size_t y = 0, x = 0;
  int label = 0;
};
using SparseLabels = std::vector<PixelLabel>;

// Normalized coordinates in [0,1]^2 (x along width, y along height).
struct Keypoint {
  double x = 0.0, y = 0.0;
  bool visible = false;
};
using KeypointSet = std::vector<Keypoint>;

// Validation at module boundaries. Throws std::invalid_argument.
void validate_image(const Image& img);
void validate_foreground(const ForegroundMask& fg, std::size_t h, std::size_t w);
void validate_soft_mask(const SoftMask& mask, double simplex_tol = 1e-5);

// Mass below which a part is treated as empty (no defined descriptor).
inline constexpr double kEpsMass = 1e-6;

// Argmax over part channels; ties break toward the smallest index.
LabelGrid hard_assign(const SoftMask& mask);

// Per-part soft mass over foreground pixels. Throws on empty foreground.
std::vector<double> mask_mass(const SoftMask& mask, const ForegroundMask& fg);

// 4-neighborhood erosion, `radius` passes.
ForegroundMask erode(const ForegroundMask& fg, int radius);

// Serialization. Label grids are 8-bit grayscale rasters: pixel value = label
// (0..254), 255 = ignore. Keypoints are text rows "x y visible". Foreground
// masks are 0/255 rasters; loading binarizes at 0.5 of full scale.
void save_label_grid(const std::filesystem::path& path, const LabelGrid& grid);
LabelGrid load_label_grid(const std::filesystem::path& path);
void save_keypoints(const std::filesystem::path& path, const KeypointSet& kps);
KeypointSet load_keypoints(const std::filesystem::path& path);
void save_foreground(const std::filesystem::path& path, const ForegroundMask& fg);
ForegroundMask load_foreground(const std::filesystem::path& path);

}  // namespace partscope
