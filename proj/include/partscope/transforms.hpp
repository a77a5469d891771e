#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "partscope/core_types.hpp"
#include "partscope/rng.hpp"
#include "partscope/tensor.hpp"

namespace partscope {

// Random affine + photometric image transformation. The geometric part acts
// on any image-like tensor (including soft masks); the photometric part acts
// on images only, with identity action in mask space.
struct TransformSpec {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double translate_x = 0.0;  // fraction of width
  double translate_y = 0.0;  // fraction of height
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  std::uint64_t seed = 0;

  bool geometric_identity() const {
    return rotation_deg == 0.0 && scale == 1.0 && translate_x == 0.0 && translate_y == 0.0;
  }

  // Forward 2x3 matrix mapping input pixel centers to output pixel centers,
  // rotation and scale about the image center, for an (h, w) grid.
  std::array<double, 6> matrix(std::size_t h, std::size_t w) const;
};

struct AugmentationRanges {
  double theta_max_deg = 30.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double translate_max = 0.1;
  double brightness_jitter = 0.3;
  double contrast_jitter = 0.3;
  double saturation_jitter = 0.3;
};

// Validates ranges (min <= max, jitters in [0, 1), non-degenerate linear
// part) and throws ConfigError otherwise.
void validate_ranges(const AugmentationRanges& ranges);

// Draws a spec uniformly within the ranges; pure function of the seed.
TransformSpec sample_transform(const AugmentationRanges& ranges, std::uint64_t seed);

enum class Interp { Bilinear, Nearest };

struct WarpResult {
  Tensor data;                      // same shape as input
  std::vector<std::uint8_t> valid;  // (h*w), 1 where the source lies in-domain
  std::size_t valid_count = 0;
};

// Inverse-warp sampling of a (C, h, w) tensor under the spec's geometric
// action. Out-of-domain output pixels are zero-filled and flagged invalid;
// they must be excluded by the caller, never treated as content.
WarpResult apply_geometric(const TransformSpec& t, const Tensor& tensor, Interp interp);

// Gradient of apply_geometric w.r.t. its input tensor: scatters d_out through
// the sampling weights (invalid pixels contribute nothing). Serial; the warp
// is never a bottleneck.
void apply_geometric_backward(const TransformSpec& t, const Tensor& d_out,
                              const std::vector<std::uint8_t>& valid, Interp interp,
                              Tensor& d_in);

// Nearest-neighbor warp of integer labels; invalid pixels become kIgnore.
LabelGrid apply_geometric(const TransformSpec& t, const LabelGrid& grid);

// Brightness, then contrast about the per-channel mean, then saturation
// toward per-pixel luma; output clipped to [0, 1]. Masks are never touched.
Image apply_photometric(const TransformSpec& t, const Image& image);

}  // namespace partscope
