#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partscope/config.hpp"
#include "partscope/core_types.hpp"

namespace partscope::data {

// One manifest row. Paths are stored relative to the manifest directory; "-"
// marks absent optional files.
struct SampleRecord {
  std::string id;
  std::filesystem::path image, fg;
  std::optional<std::filesystem::path> keypoints, part_labels;
  std::string class_name;
  std::string split;  // "train" or "test"
};

struct Manifest {
  std::filesystem::path root;
  std::vector<SampleRecord> records;

  std::vector<const SampleRecord*> split(const std::string& name) const;
};

// Tab-separated, one sample per line, `#` comments:
//   id <TAB> image <TAB> fg <TAB> keypoints <TAB> part_labels <TAB> class <TAB> split
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct Sample {
  std::string id;
  Image image;
  ForegroundMask fg;
  std::optional<KeypointSet> keypoints;
  std::optional<LabelGrid> part_labels;
  std::string class_name;
};

Sample load_sample(const Manifest& manifest, const SampleRecord& record);
std::vector<Sample> load_split(const Manifest& manifest, const std::string& split);

// Replaces every sample's foreground with `<id>.pgm` from the directory
// (e.g. saliency output), binarized at half scale. Shape mismatches and
// missing files are errors naming the sample.
void substitute_foregrounds(std::vector<Sample>& samples, const std::filesystem::path& dir);

enum class PartTexture { Solid, Stripes, NoiseTexture };

struct PartAppearance {
  PartTexture texture = PartTexture::Solid;
  std::array<double, 3> color{0.5, 0.5, 0.5};
  std::array<double, 3> color2{0.5, 0.5, 0.5};  // second stripe color
};

// Synthetic part dataset: K elliptical parts on a deformable template with a
// per-sample affine pose, cluttered background, exact masks/labels/keypoints.
// The default K=4 appearance table contains one striped part whose mean color
// equals a solid part's color (separable by texture only) and two solid parts
// that differ only in color, so no single cue suffices.
struct SyntheticSpec {
  int k_parts = 4;
  int image_size = 64;
  int train_samples = 500;
  int test_samples = 100;
  double clutter = 0.35;            // expected clutter blobs per 32x32 background area
  double color_jitter_sigma = 0.02;  // per-sample jitter of part base colors
  std::vector<PartAppearance> parts;  // empty = default table, cycled to K
  std::string class_name = "synthetic";
  std::uint64_t seed = 7;
};

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);
SyntheticSpec synthetic_spec_from_config(KeyValueConfig& cfg);

// Writes images, masks, labels, keypoints and the manifest under out_dir;
// returns the manifest path. Byte-identical for identical specs.
std::filesystem::path generate(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace partscope::data
