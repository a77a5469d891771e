#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "partscope/core_types.hpp"

namespace partscope {

enum class ProviderKind { RawColor, ToyCnn, PrecomputedFile, ExternalPretrained };

struct FeatureProviderSpec {
  ProviderKind kind = ProviderKind::ToyCnn;
  std::vector<std::string> layer_names;  // required for external kinds
  bool frozen = true;                    // perceptual use keeps the provider fixed
  std::uint64_t seed = 0x70F5ull;        // toy-cnn weight seed
  std::filesystem::path directory;       // precomputed-file root
  std::string external_name;             // registered adapter to use
};

// Perceptual feature source phi. Frozen providers are referentially
// transparent: the same image always yields the same map. `sample_id` names
// the sample for file-backed providers and is ignored otherwise.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual FeatureMap extract(const Image& image, const std::string& sample_id = "") const = 0;
};

std::unique_ptr<FeatureProvider> make_provider(const FeatureProviderSpec& spec);

// Adapters for external pretrained backbones plug in here; the core ships
// the interface only. The adapter returns named layer maps; the provider
// pools them to the coarsest grid and concatenates channels.
class ExternalBackbone {
 public:
  virtual ~ExternalBackbone() = default;
  virtual std::map<std::string, FeatureMap> extract_layers(const Image& image) const = 0;
};

void register_external_backbone(const std::string& name,
                                std::function<std::unique_ptr<ExternalBackbone>()> factory);

// "PFEA" feature file: magic, u32 version, u32 (d, h, w) little-endian, then
// row-major 64-bit floats. Lossless and language-neutral.
void save_features(const std::filesystem::path& path, const FeatureMap& features);
FeatureMap load_features(const std::filesystem::path& path);

// Pools every map to the coarsest grid among them and concatenates channels.
FeatureMap concat_to_coarsest(const std::vector<FeatureMap>& layers);

}  // namespace partscope
