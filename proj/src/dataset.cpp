#include "partscope/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "partscope/errors.hpp"
#include "partscope/image_io.hpp"
#include "partscope/rng.hpp"

namespace partscope::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string field_or_dash(const std::optional<std::filesystem::path>& p) {
  return p.has_value() ? p->string() : "-";
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<const SampleRecord*> Manifest::split(const std::string& name) const {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> f = split_tabs(line);
    if (f.size() != 7)
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected 7 tab-separated fields");
    SampleRecord r;
    r.id = f[0];
    r.image = f[1];
    r.fg = f[2];
    if (f[3] != "-") r.keypoints = f[3];
    if (f[4] != "-") r.part_labels = f[4];
    r.class_name = f[5];
    r.split = f[6];
    if (r.split != "train" && r.split != "test")
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": unknown split `" +
                    r.split + "`");
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# id\timage\tfg\tkeypoints\tpart_labels\tclass\tsplit\n";
  for (const SampleRecord& r : manifest.records) {
    out << r.id << '\t' << r.image.string() << '\t' << r.fg.string() << '\t'
        << field_or_dash(r.keypoints) << '\t' << field_or_dash(r.part_labels) << '\t'
        << r.class_name << '\t' << r.split << '\n';
  }
  if (!out) throw IoError("short write to manifest " + path.string());
}

Sample load_sample(const Manifest& manifest, const SampleRecord& record) {
  Sample s;
  s.id = record.id;
  s.class_name = record.class_name;
  try {
    const RgbImage8 raw = read_ppm(manifest.root / record.image);
    s.image.data = Tensor({3, raw.height, raw.width});
    const std::size_t hw = raw.height * raw.width;
    for (std::size_t u = 0; u < hw; ++u)
      for (std::size_t c = 0; c < 3; ++c)
        s.image.data.data()[c * hw + u] = static_cast<double>(raw.pixels[u * 3 + c]) / 255.0;
    validate_image(s.image);
    s.fg = load_foreground(manifest.root / record.fg);
    validate_foreground(s.fg, raw.height, raw.width);
    if (record.keypoints.has_value())
      s.keypoints = load_keypoints(manifest.root / *record.keypoints);
    if (record.part_labels.has_value()) {
      s.part_labels = load_label_grid(manifest.root / *record.part_labels);
      if (s.part_labels->height != raw.height || s.part_labels->width != raw.width)
        throw IoError("part label grid shape mismatch");
    }
  } catch (const std::exception& e) {
    throw IoError("sample `" + record.id + "`: " + e.what());
  }
  return s;
}

std::vector<Sample> load_split(const Manifest& manifest, const std::string& split) {
  std::vector<Sample> out;
  for (const SampleRecord* r : manifest.split(split)) out.push_back(load_sample(manifest, *r));
  return out;
}

void substitute_foregrounds(std::vector<Sample>& samples, const std::filesystem::path& dir) {
  for (Sample& s : samples) {
    const std::filesystem::path path = dir / (s.id + ".pgm");
    if (!std::filesystem::exists(path))
      throw IoError("no replacement mask for sample `" + s.id + "` at " + path.string());
    ForegroundMask fg = load_foreground(path);
    if (fg.height != s.image.height() || fg.width != s.image.width())
      throw IoError("replacement mask for sample `" + s.id + "` has mismatched shape");
    s.fg = std::move(fg);
  }
}

namespace {

struct PartShape {
  double cx, cy;  // template coords
  double rx, ry;
};

std::vector<PartShape> template_layout(int k) {
  std::vector<PartShape> parts;
  if (k == 1) {
    parts.push_back({0.0, 0.0, 0.6, 0.5});
  } else if (k <= 4) {
    const PartShape table[4] = {
        {0.0, -0.52, 0.27, 0.25},   // top blob
        {0.0, 0.12, 0.40, 0.32},    // central body
        {-0.52, 0.54, 0.25, 0.21},  // lower left
        {0.52, 0.54, 0.25, 0.21},   // lower right
    };
    for (int i = 0; i < k; ++i) parts.push_back(table[i]);
  } else {
    const double r = 2.2 / std::sqrt(static_cast<double>(k));
    for (int i = 0; i < k; ++i) {
      const double a = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(k);
      parts.push_back({0.55 * std::cos(a), 0.55 * std::sin(a), 0.33 * r, 0.27 * r});
    }
  }
  return parts;
}

std::vector<PartAppearance> default_appearance(int k) {
  // Parts 0/1 share the solid texture and differ only in color; part 2 is
  // striped with a mean color equal to part 3's solid color.
  const PartAppearance table[4] = {
      {PartTexture::Solid, {0.85, 0.22, 0.18}, {}},
      {PartTexture::Solid, {0.20, 0.35, 0.85}, {}},
      {PartTexture::Stripes, {0.90, 0.85, 0.10}, {0.10, 0.55, 0.35}},
      {PartTexture::Solid, {0.50, 0.70, 0.225}, {}},
  };
  std::vector<PartAppearance> out;
  for (int i = 0; i < k; ++i) out.push_back(table[i % 4]);
  return out;
}

struct SampleArt {
  RgbImage8 image;
  ForegroundMask fg;
  LabelGrid labels;  // 0..K-1 parts, K = background
  KeypointSet keypoints;
};

SampleArt render_sample(const SyntheticSpec& spec, const std::vector<PartShape>& layout,
                        const std::vector<PartAppearance>& looks, Rng& rng) {
  const int k = spec.k_parts;
  const std::size_t size = static_cast<std::size_t>(spec.image_size);
  const double half = static_cast<double>(size) / 2.0;
  const double unit = half * 0.78;  // template unit in pixels

  // pose
  const double phi = rng.uniform(-25.0, 25.0) * kPi / 180.0;
  const double sigma = rng.uniform(0.85, 1.10);
  const double tx = rng.uniform(-0.06, 0.06) * static_cast<double>(size);
  const double ty = rng.uniform(-0.06, 0.06) * static_cast<double>(size);
  const double cphi = std::cos(phi), sphi = std::sin(phi);

  // per-sample deformation and appearance jitter
  std::vector<PartShape> shapes = layout;
  for (PartShape& p : shapes) {
    p.cx += rng.uniform(-0.04, 0.04);
    p.cy += rng.uniform(-0.04, 0.04);
  }
  std::vector<PartAppearance> colors = looks;
  for (PartAppearance& a : colors) {
    for (int c = 0; c < 3; ++c) {
      a.color[static_cast<std::size_t>(c)] = std::clamp(
          a.color[static_cast<std::size_t>(c)] + spec.color_jitter_sigma * rng.normal(), 0.05,
          0.95);
      a.color2[static_cast<std::size_t>(c)] = std::clamp(
          a.color2[static_cast<std::size_t>(c)] + spec.color_jitter_sigma * rng.normal(), 0.05,
          0.95);
    }
  }
  const double stripe_phase = rng.uniform(0.0, 1.0);
  const double stripe_period = 0.16;  // template units, ~4 px at 64

  SampleArt art;
  art.labels.height = size;
  art.labels.width = size;
  art.labels.data.assign(size * size, k);
  art.fg.height = size;
  art.fg.width = size;
  art.fg.data.assign(size * size, 0);

  std::vector<double> rgb(3 * size * size, 0.0);

  // background: soft vertical ramp
  const double bg_base = rng.uniform(0.52, 0.62);
  for (std::size_t y = 0; y < size; ++y) {
    const double ramp = 0.05 * (static_cast<double>(y) / static_cast<double>(size) - 0.5);
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t u = y * size + x;
      for (std::size_t c = 0; c < 3; ++c) rgb[c * size * size + u] = bg_base + ramp;
    }
  }

  // clutter blobs, drawn before parts so they never override the object
  const double area_units = static_cast<double>(size * size) / (32.0 * 32.0);
  const int n_blobs = static_cast<int>(std::floor(spec.clutter * area_units * rng.uniform(0.5, 1.5)));
  for (int b = 0; b < n_blobs; ++b) {
    const double bx = rng.uniform(0.0, static_cast<double>(size));
    const double by = rng.uniform(0.0, static_cast<double>(size));
    const double brx = rng.uniform(2.0, 6.0), bry = rng.uniform(2.0, 6.0);
    double col[3];
    for (double& c : col) c = 0.5 + 0.6 * (rng.uniform() - 0.5);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - bx) / brx;
        const double dy = (static_cast<double>(y) + 0.5 - by) / bry;
        if (dx * dx + dy * dy > 1.0) continue;
        const std::size_t u = y * size + x;
        for (std::size_t c = 0; c < 3; ++c) rgb[c * size * size + u] = col[c];
      }
    }
  }

  // parts: nearest ellipse metric keeps regions disjoint; union is the fg
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5 - half - tx;
      const double py = static_cast<double>(y) + 0.5 - half - ty;
      // rotate back into template coords
      const double ux = (cphi * px + sphi * py) / (sigma * unit);
      const double uy = (-sphi * px + cphi * py) / (sigma * unit);
      int best = -1;
      double best_m = 1.0;
      for (int part = 0; part < k; ++part) {
        const PartShape& s = shapes[static_cast<std::size_t>(part)];
        const double ex = (ux - s.cx) / s.rx;
        const double ey = (uy - s.cy) / s.ry;
        const double m = ex * ex + ey * ey;
        if (m <= best_m) {
          if (best == -1 || m < best_m) {
            best_m = m;
            best = part;
          }
        }
      }
      if (best < 0) continue;
      const std::size_t u = y * size + x;
      art.labels.data[u] = best;
      art.fg.data[u] = 1;
      const PartAppearance& a = colors[static_cast<std::size_t>(best)];
      double col[3] = {a.color[0], a.color[1], a.color[2]};
      if (a.texture == PartTexture::Stripes) {
        const double band = (ux + 0.37 * uy) / stripe_period + stripe_phase * 2.0;
        const long long idx = static_cast<long long>(std::floor(band));
        if (idx % 2 != 0) {
          col[0] = a.color2[0];
          col[1] = a.color2[1];
          col[2] = a.color2[2];
        }
      } else if (a.texture == PartTexture::NoiseTexture) {
        for (double& c : col) c = std::clamp(c + rng.uniform(-0.25, 0.25), 0.0, 1.0);
      }
      for (std::size_t c = 0; c < 3; ++c) rgb[c * size * size + u] = col[c];
    }
  }

  // light pixel noise everywhere
  for (std::size_t u = 0; u < size * size; ++u) {
    const double n = rng.uniform(-0.015, 0.015);
    for (std::size_t c = 0; c < 3; ++c)
      rgb[c * size * size + u] = std::clamp(rgb[c * size * size + u] + n, 0.0, 1.0);
  }

  // keypoints: exact part centroids in normalized pixel-center coordinates
  art.keypoints.assign(static_cast<std::size_t>(k), Keypoint{});
  std::vector<double> sx(static_cast<std::size_t>(k), 0.0), sy(static_cast<std::size_t>(k), 0.0);
  std::vector<std::size_t> cnt(static_cast<std::size_t>(k), 0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const int lab = art.labels.data[y * size + x];
      if (lab < 0 || lab >= k) continue;
      sx[static_cast<std::size_t>(lab)] += (static_cast<double>(x) + 0.5) / static_cast<double>(size);
      sy[static_cast<std::size_t>(lab)] += (static_cast<double>(y) + 0.5) / static_cast<double>(size);
      ++cnt[static_cast<std::size_t>(lab)];
    }
  }
  for (int part = 0; part < k; ++part) {
    const auto i = static_cast<std::size_t>(part);
    if (cnt[i] > 0) {
      art.keypoints[i] = {sx[i] / static_cast<double>(cnt[i]), sy[i] / static_cast<double>(cnt[i]),
                          true};
    } else {
      art.keypoints[i] = {0.0, 0.0, false};
    }
  }

  art.image.height = size;
  art.image.width = size;
  art.image.pixels.resize(3 * size * size);
  for (std::size_t u = 0; u < size * size; ++u)
    for (std::size_t c = 0; c < 3; ++c)
      art.image.pixels[u * 3 + c] =
          static_cast<std::uint8_t>(std::lround(rgb[c * size * size + u] * 255.0));
  return art;
}

}  // namespace

SyntheticSpec synthetic_spec_from_config(KeyValueConfig& cfg) {
  SyntheticSpec spec;
  spec.k_parts = static_cast<int>(cfg.get_int("k_parts", spec.k_parts));
  spec.image_size = static_cast<int>(cfg.get_int("image_size", spec.image_size));
  spec.train_samples = static_cast<int>(cfg.get_int("train_samples", spec.train_samples));
  spec.test_samples = static_cast<int>(cfg.get_int("test_samples", spec.test_samples));
  spec.clutter = cfg.get_double("clutter", spec.clutter);
  spec.color_jitter_sigma = cfg.get_double("color_jitter_sigma", spec.color_jitter_sigma);
  spec.class_name = cfg.get_string("class_name", spec.class_name);
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(spec.seed)));
  if (spec.k_parts < 1) throw ConfigError("k_parts must be >= 1");
  if (spec.image_size < 16) throw ConfigError("image_size must be >= 16");
  if (spec.train_samples < 1 || spec.test_samples < 0)
    throw ConfigError("sample counts must be positive");
  if (spec.clutter < 0.0) throw ConfigError("clutter must be >= 0");

  for (int i = 0; i < spec.k_parts; ++i) {
    const std::string key = "part" + std::to_string(i);
    if (!cfg.has(key)) continue;
    if (spec.parts.empty()) spec.parts = default_appearance(spec.k_parts);
    const std::string v = cfg.get_string(key, "");
    std::istringstream in(v);
    std::string kind;
    std::getline(in, kind, ':');
    PartAppearance a;
    if (kind == "solid") {
      a.texture = PartTexture::Solid;
    } else if (kind == "stripes") {
      a.texture = PartTexture::Stripes;
    } else if (kind == "noise") {
      a.texture = PartTexture::NoiseTexture;
    } else {
      throw ConfigError(key + ": unknown texture `" + kind + "`");
    }
    auto read_rgb = [&](std::array<double, 3>& rgb) {
      std::string triple;
      if (!std::getline(in, triple, ':')) throw ConfigError(key + ": missing color");
      std::istringstream t(triple);
      std::string item;
      for (int c = 0; c < 3; ++c) {
        if (!std::getline(t, item, ',')) throw ConfigError(key + ": color needs r,g,b");
        rgb[static_cast<std::size_t>(c)] = std::stod(item);
      }
    };
    read_rgb(a.color);
    if (a.texture == PartTexture::Stripes) read_rgb(a.color2);
    spec.parts[static_cast<std::size_t>(i)] = a;
  }
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  KeyValueConfig cfg = KeyValueConfig::from_file(path);
  SyntheticSpec spec = synthetic_spec_from_config(cfg);
  cfg.finish();
  return spec;
}

std::filesystem::path generate(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());

  const std::vector<PartShape> layout = template_layout(spec.k_parts);
  const std::vector<PartAppearance> looks =
      spec.parts.empty() ? default_appearance(spec.k_parts) : spec.parts;

  Manifest manifest;
  manifest.root = out_dir;

  auto emit = [&](const std::string& split, int count, std::uint64_t salt) {
    for (int i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%04d", split.c_str(), i);
      Rng rng(Rng::mix(spec.seed, salt + static_cast<std::uint64_t>(i)));
      const SampleArt art = render_sample(spec, layout, looks, rng);
      SampleRecord r;
      r.id = id;
      r.image = std::string(id) + ".ppm";
      r.fg = std::string(id) + "_fg.pgm";
      r.keypoints = std::string(id) + "_kp.txt";
      r.part_labels = std::string(id) + "_parts.pgm";
      r.class_name = spec.class_name;
      r.split = split;
      write_ppm(out_dir / r.image, art.image);
      save_foreground(out_dir / r.fg, art.fg);
      save_keypoints(out_dir / *r.keypoints, art.keypoints);
      save_label_grid(out_dir / *r.part_labels, art.labels);
      manifest.records.push_back(std::move(r));
    }
  };
  emit("train", spec.train_samples, 0x1000000ull);
  emit("test", spec.test_samples, 0x2000000ull);

  const std::filesystem::path manifest_path = out_dir / "manifest.tsv";
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace partscope::data
