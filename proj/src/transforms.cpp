#include "partscope/transforms.hpp"

#include <algorithm>
#include <cmath>

#include "partscope/errors.hpp"
#include "partscope/parallel.hpp"

namespace partscope {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct InverseMap {
  // src = A * (out - shift) + center
  double a00, a01, a10, a11;
  double shift_x, shift_y;
  double cx, cy;

  void source(double xo, double yo, double& xs, double& ys) const {
    const double dx = xo - shift_x;
    const double dy = yo - shift_y;
    xs = a00 * dx + a01 * dy + cx;
    ys = a10 * dx + a11 * dy + cy;
  }
};

InverseMap inverse_map(const TransformSpec& t, std::size_t h, std::size_t w) {
  const double theta = t.rotation_deg * kPi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  InverseMap m;
  // forward linear part is scale * rotation; invert analytically
  m.a00 = c / t.scale;
  m.a01 = s / t.scale;
  m.a10 = -s / t.scale;
  m.a11 = c / t.scale;
  m.cx = (static_cast<double>(w) - 1.0) / 2.0;
  m.cy = (static_cast<double>(h) - 1.0) / 2.0;
  m.shift_x = m.cx + t.translate_x * static_cast<double>(w);
  m.shift_y = m.cy + t.translate_y * static_cast<double>(h);
  return m;
}

}  // namespace

std::array<double, 6> TransformSpec::matrix(std::size_t h, std::size_t w) const {
  const double theta = rotation_deg * kPi / 180.0;
  const double c = std::cos(theta) * scale, s = std::sin(theta) * scale;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  // out = L * (in - center) + center + translation
  return {c, -s, cx - c * cx + s * cy + translate_x * static_cast<double>(w),
          s, c,  cy - s * cx - c * cy + translate_y * static_cast<double>(h)};
}

void validate_ranges(const AugmentationRanges& r) {
  if (r.theta_max_deg < 0.0) throw ConfigError("aug_theta_max_deg must be >= 0");
  if (r.scale_min > r.scale_max) throw ConfigError("aug_scale_min must be <= aug_scale_max");
  if (r.scale_min * r.scale_min <= 0.1)
    throw ConfigError("aug_scale_min too small: warp would be near-singular");
  if (r.translate_max < 0.0) throw ConfigError("aug_translate_max must be >= 0");
  for (double j : {r.brightness_jitter, r.contrast_jitter, r.saturation_jitter})
    if (j < 0.0 || j >= 1.0) throw ConfigError("photometric jitter must lie in [0, 1)");
}

TransformSpec sample_transform(const AugmentationRanges& ranges, std::uint64_t seed) {
  validate_ranges(ranges);
  Rng rng(seed);
  TransformSpec t;
  t.rotation_deg = rng.uniform(-ranges.theta_max_deg, ranges.theta_max_deg);
  t.scale = rng.uniform(ranges.scale_min, ranges.scale_max);
  t.translate_x = rng.uniform(-ranges.translate_max, ranges.translate_max);
  t.translate_y = rng.uniform(-ranges.translate_max, ranges.translate_max);
  t.brightness = rng.uniform(1.0 - ranges.brightness_jitter, 1.0 + ranges.brightness_jitter);
  t.contrast = rng.uniform(1.0 - ranges.contrast_jitter, 1.0 + ranges.contrast_jitter);
  t.saturation = rng.uniform(1.0 - ranges.saturation_jitter, 1.0 + ranges.saturation_jitter);
  t.seed = seed;
  return t;
}

WarpResult apply_geometric(const TransformSpec& t, const Tensor& tensor, Interp interp) {
  if (tensor.rank() != 3) throw std::invalid_argument("apply_geometric expects a (C, h, w) tensor");
  const std::size_t ch = tensor.dim(0), h = tensor.dim(1), w = tensor.dim(2);
  const std::size_t hw = h * w;
  WarpResult out;
  out.data = Tensor({ch, h, w});
  out.valid.assign(hw, 0);

  if (t.geometric_identity()) {
    out.data = tensor;
    out.valid.assign(hw, 1);
    out.valid_count = hw;
    return out;
  }

  const InverseMap map = inverse_map(t, h, w);
  const double* in = tensor.data();
  double* dst = out.data.data();
  std::vector<std::size_t> counts(par::num_blocks(hw), 0);
  par::parallel_for_blocked(hw, [&](std::size_t begin, std::size_t end) {
    std::size_t n_valid = 0;
    for (std::size_t u = begin; u < end; ++u) {
      const double xo = static_cast<double>(u % w);
      const double yo = static_cast<double>(u / w);
      double xs, ys;
      map.source(xo, yo, xs, ys);
      if (xs < 0.0 || ys < 0.0 || xs > static_cast<double>(w - 1) ||
          ys > static_cast<double>(h - 1))
        continue;
      out.valid[u] = 1;
      ++n_valid;
      if (interp == Interp::Nearest) {
        const std::size_t xi = static_cast<std::size_t>(std::lround(xs));
        const std::size_t yi = static_cast<std::size_t>(std::lround(ys));
        for (std::size_t c = 0; c < ch; ++c) dst[c * hw + u] = in[c * hw + yi * w + xi];
      } else {
        const std::size_t x0 = static_cast<std::size_t>(xs);
        const std::size_t y0 = static_cast<std::size_t>(ys);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fx = xs - static_cast<double>(x0);
        const double fy = ys - static_cast<double>(y0);
        for (std::size_t c = 0; c < ch; ++c) {
          const double* pc = in + c * hw;
          const double top = (1.0 - fx) * pc[y0 * w + x0] + fx * pc[y0 * w + x1];
          const double bot = (1.0 - fx) * pc[y1 * w + x0] + fx * pc[y1 * w + x1];
          dst[c * hw + u] = (1.0 - fy) * top + fy * bot;
        }
      }
    }
    counts[begin / par::kSumBlock] = n_valid;
  });
  for (std::size_t n : counts) out.valid_count += n;
  return out;
}

void apply_geometric_backward(const TransformSpec& t, const Tensor& d_out,
                              const std::vector<std::uint8_t>& valid, Interp interp,
                              Tensor& d_in) {
  const std::size_t ch = d_out.dim(0), h = d_out.dim(1), w = d_out.dim(2);
  const std::size_t hw = h * w;
  if (!d_in.same_shape(d_out)) d_in = Tensor({ch, h, w});

  if (t.geometric_identity()) {
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t u = 0; u < hw; ++u)
        if (valid[u]) d_in.data()[c * hw + u] += d_out.data()[c * hw + u];
    return;
  }

  const InverseMap map = inverse_map(t, h, w);
  const double* g = d_out.data();
  double* dst = d_in.data();
  for (std::size_t u = 0; u < hw; ++u) {
    if (!valid[u]) continue;
    const double xo = static_cast<double>(u % w);
    const double yo = static_cast<double>(u / w);
    double xs, ys;
    map.source(xo, yo, xs, ys);
    if (interp == Interp::Nearest) {
      const std::size_t xi = static_cast<std::size_t>(std::lround(xs));
      const std::size_t yi = static_cast<std::size_t>(std::lround(ys));
      for (std::size_t c = 0; c < ch; ++c) dst[c * hw + yi * w + xi] += g[c * hw + u];
    } else {
      const std::size_t x0 = static_cast<std::size_t>(xs);
      const std::size_t y0 = static_cast<std::size_t>(ys);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fx = xs - static_cast<double>(x0);
      const double fy = ys - static_cast<double>(y0);
      for (std::size_t c = 0; c < ch; ++c) {
        const double gu = g[c * hw + u];
        double* pc = dst + c * hw;
        pc[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * gu;
        pc[y0 * w + x1] += (1.0 - fy) * fx * gu;
        pc[y1 * w + x0] += fy * (1.0 - fx) * gu;
        pc[y1 * w + x1] += fy * fx * gu;
      }
    }
  }
}

LabelGrid apply_geometric(const TransformSpec& t, const LabelGrid& grid) {
  const std::size_t h = grid.height, w = grid.width;
  LabelGrid out;
  out.height = h;
  out.width = w;
  out.data.assign(h * w, LabelGrid::kIgnore);
  const InverseMap map = inverse_map(t, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double xs, ys;
      map.source(static_cast<double>(x), static_cast<double>(y), xs, ys);
      if (xs < 0.0 || ys < 0.0 || xs > static_cast<double>(w - 1) ||
          ys > static_cast<double>(h - 1))
        continue;
      const std::size_t xi = static_cast<std::size_t>(std::lround(xs));
      const std::size_t yi = static_cast<std::size_t>(std::lround(ys));
      out.at(y, x) = grid.at(yi, xi);
    }
  }
  return out;
}

Image apply_photometric(const TransformSpec& t, const Image& image) {
  const std::size_t h = image.height(), w = image.width();
  const std::size_t hw = h * w;
  Image out;
  out.data = image.data;
  double* p = out.data.data();

  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t u = 0; u < hw; ++u) p[c * hw + u] *= t.brightness;

  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t u = 0; u < hw; ++u) mean += p[c * hw + u];
    mean /= static_cast<double>(hw);
    for (std::size_t u = 0; u < hw; ++u)
      p[c * hw + u] = (p[c * hw + u] - mean) * t.contrast + mean;
  }

  for (std::size_t u = 0; u < hw; ++u) {
    const double luma = 0.299 * p[u] + 0.587 * p[hw + u] + 0.114 * p[2 * hw + u];
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = luma + t.saturation * (p[c * hw + u] - luma);
      p[c * hw + u] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace partscope
