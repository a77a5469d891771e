#include "partscope/core_types.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "partscope/errors.hpp"
#include "partscope/image_io.hpp"

namespace partscope {

void validate_image(const Image& img) {
  if (img.data.rank() != 3 || img.data.dim(0) != 3)
    throw std::invalid_argument("image must have shape (3, H, W)");
  if (img.height() < 8 || img.width() < 8)
    throw std::invalid_argument("image must be at least 8x8 pixels");
  const double* p = img.data.data();
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0 || p[i] > 1.0)
      throw std::invalid_argument("image values must be finite and within [0, 1]");
  }
}

void validate_foreground(const ForegroundMask& fg, std::size_t h, std::size_t w) {
  if (fg.height != h || fg.width != w)
    throw std::invalid_argument("foreground mask shape does not match image");
  if (fg.data.size() != h * w) throw std::invalid_argument("foreground mask storage mismatch");
  for (std::uint8_t v : fg.data)
    if (v > 1) throw std::invalid_argument("foreground mask must be binary");
}

void validate_soft_mask(const SoftMask& mask, double simplex_tol) {
  if (mask.data.rank() != 3 || mask.parts() == 0)
    throw std::invalid_argument("soft mask must have shape (K, H, W), K >= 1");
  const std::size_t k = mask.parts(), hw = mask.height() * mask.width();
  const double* p = mask.data.data();
  for (std::size_t u = 0; u < hw; ++u) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = p[c * hw + u];
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw std::invalid_argument("soft mask values must lie in [0, 1]");
      sum += v;
    }
    if (std::fabs(sum - 1.0) > simplex_tol)
      throw std::invalid_argument("soft mask violates the per-pixel simplex constraint");
  }
}

LabelGrid hard_assign(const SoftMask& mask) {
  const std::size_t k = mask.parts(), h = mask.height(), w = mask.width();
  const std::size_t hw = h * w;
  LabelGrid out;
  out.height = h;
  out.width = w;
  out.data.resize(hw);
  const double* p = mask.data.data();
  for (std::size_t u = 0; u < hw; ++u) {
    int best = 0;
    double best_v = p[u];
    for (std::size_t c = 1; c < k; ++c) {
      const double v = p[c * hw + u];
      if (v > best_v) {  // strict: ties keep the smallest index
        best_v = v;
        best = static_cast<int>(c);
      }
    }
    out.data[u] = best;
  }
  return out;
}

std::vector<double> mask_mass(const SoftMask& mask, const ForegroundMask& fg) {
  const std::size_t k = mask.parts(), h = mask.height(), w = mask.width();
  if (fg.height != h || fg.width != w)
    throw std::invalid_argument("mask_mass: foreground shape mismatch");
  if (fg.count() == 0) throw std::invalid_argument("empty foreground");
  const std::size_t hw = h * w;
  std::vector<double> mass(k, 0.0);
  const double* p = mask.data.data();
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t u = 0; u < hw; ++u)
      if (fg.data[u]) s += p[c * hw + u];
    mass[c] = s;
  }
  return mass;
}

ForegroundMask erode(const ForegroundMask& fg, int radius) {
  ForegroundMask cur = fg;
  const std::size_t h = fg.height, w = fg.width;
  for (int pass = 0; pass < radius; ++pass) {
    ForegroundMask next = cur;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (!cur.at(y, x)) continue;
        const bool border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
        if (border || !cur.at(y - 1, x) || !cur.at(y + 1, x) || !cur.at(y, x - 1) ||
            !cur.at(y, x + 1))
          next.at(y, x) = 0;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

void save_label_grid(const std::filesystem::path& path, const LabelGrid& grid) {
  GrayImage8 img;
  img.height = grid.height;
  img.width = grid.width;
  img.pixels.resize(grid.data.size());
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    const int v = grid.data[i];
    if (v == LabelGrid::kIgnore) {
      img.pixels[i] = 255;
    } else if (v >= 0 && v < 255) {
      img.pixels[i] = static_cast<std::uint8_t>(v);
    } else {
      throw IoError("label " + std::to_string(v) + " not representable in 8-bit grid");
    }
  }
  write_pgm(path, img);
}

LabelGrid load_label_grid(const std::filesystem::path& path) {
  const GrayImage8 img = read_pgm(path);
  LabelGrid grid;
  grid.height = img.height;
  grid.width = img.width;
  grid.data.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    grid.data[i] = img.pixels[i] == 255 ? LabelGrid::kIgnore : static_cast<int>(img.pixels[i]);
  return grid;
}

void save_keypoints(const std::filesystem::path& path, const KeypointSet& kps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[96];
  for (const Keypoint& kp : kps) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %d\n", kp.x, kp.y, kp.visible ? 1 : 0);
    out << buf;
  }
  if (!out) throw IoError("short write to " + path.string());
}

KeypointSet load_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  KeypointSet kps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Keypoint kp;
    int vis = 0;
    if (!(row >> kp.x >> kp.y >> vis)) throw IoError("malformed keypoint row in " + path.string());
    kp.visible = vis != 0;
    kps.push_back(kp);
  }
  return kps;
}

void save_foreground(const std::filesystem::path& path, const ForegroundMask& fg) {
  GrayImage8 img;
  img.height = fg.height;
  img.width = fg.width;
  img.pixels.resize(fg.data.size());
  for (std::size_t i = 0; i < fg.data.size(); ++i) img.pixels[i] = fg.data[i] ? 255 : 0;
  write_pgm(path, img);
}

ForegroundMask load_foreground(const std::filesystem::path& path) {
  const GrayImage8 img = read_pgm(path);
  ForegroundMask fg;
  fg.height = img.height;
  fg.width = img.width;
  fg.data.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) fg.data[i] = img.pixels[i] >= 128 ? 1 : 0;
  return fg;
}

}  // namespace partscope
