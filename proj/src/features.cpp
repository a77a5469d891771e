#include "partscope/features.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "partscope/errors.hpp"
#include "partscope/nn_ops.hpp"
#include "partscope/rng.hpp"

namespace partscope {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'E', 'A'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated feature file " + path.string());
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

class RawColorProvider final : public FeatureProvider {
 public:
  FeatureMap extract(const Image& image, const std::string&) const override {
    FeatureMap f;
    f.data = image.data;
    return f;
  }
};

// 4 convolution blocks: 3x3, reflect padding, tanh, stride 2 on blocks 2-4,
// widths (16, 32, 64, 64). Output grid is ceil(H/8) x ceil(W/8). Weights are
// a pure function of the spec seed, so extraction is reproducible across
// processes.
class ToyCnnProvider final : public FeatureProvider {
 public:
  ToyCnnProvider(std::uint64_t seed, std::vector<std::string> layers)
      : layers_(std::move(layers)) {
    if (layers_.empty()) layers_ = {"block4"};
    const std::size_t widths[4] = {16, 32, 64, 64};
    std::size_t ci = 3;
    Rng rng(seed);
    for (int b = 0; b < 4; ++b) {
      Tensor w({widths[b], ci, 3, 3});
      const double a = 1.0 / std::sqrt(static_cast<double>(ci * 9));
      for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
      Tensor bias({widths[b]});
      for (std::size_t i = 0; i < bias.size(); ++i) bias.data()[i] = rng.uniform(-0.5, 0.5);
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(bias));
      ci = widths[b];
    }
    for (const std::string& name : layers_)
      if (name != "block1" && name != "block2" && name != "block3" && name != "block4")
        throw ConfigError("toy-cnn has no layer named `" + name + "`");
  }

  FeatureMap extract(const Image& image, const std::string&) const override {
    std::map<std::string, FeatureMap> maps;
    Tensor x = image.data;
    for (int b = 0; b < 4; ++b) {
      Tensor y;
      nn::conv3x3_forward(x, weights_[static_cast<std::size_t>(b)],
                          biases_[static_cast<std::size_t>(b)], b == 0 ? 1 : 2, y);
      nn::tanh_forward(y);
      x = std::move(y);
      const std::string name = "block" + std::to_string(b + 1);
      if (std::find(layers_.begin(), layers_.end(), name) != layers_.end()) {
        FeatureMap f;
        f.data = x;
        maps[name] = std::move(f);
      }
    }
    std::vector<FeatureMap> ordered;
    for (const std::string& name : layers_) ordered.push_back(std::move(maps.at(name)));
    return concat_to_coarsest(ordered);
  }

 private:
  std::vector<std::string> layers_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

class PrecomputedProvider final : public FeatureProvider {
 public:
  explicit PrecomputedProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}

  FeatureMap extract(const Image&, const std::string& sample_id) const override {
    const std::filesystem::path path = dir_ / (sample_id + ".pfea");
    if (!std::filesystem::exists(path))
      throw IoError("precomputed feature file not found: " + path.string());
    return load_features(path);
  }

 private:
  std::filesystem::path dir_;
};

class ExternalProvider final : public FeatureProvider {
 public:
  ExternalProvider(std::unique_ptr<ExternalBackbone> backbone, std::vector<std::string> layers)
      : backbone_(std::move(backbone)), layers_(std::move(layers)) {}

  FeatureMap extract(const Image& image, const std::string&) const override {
    auto maps = backbone_->extract_layers(image);
    std::vector<FeatureMap> ordered;
    for (const std::string& name : layers_) {
      auto it = maps.find(name);
      if (it == maps.end()) throw ConfigError("backbone produced no layer named `" + name + "`");
      ordered.push_back(std::move(it->second));
    }
    return concat_to_coarsest(ordered);
  }

 private:
  std::unique_ptr<ExternalBackbone> backbone_;
  std::vector<std::string> layers_;
};

std::map<std::string, std::function<std::unique_ptr<ExternalBackbone>()>>& backbone_registry() {
  static std::map<std::string, std::function<std::unique_ptr<ExternalBackbone>()>> registry;
  return registry;
}

}  // namespace

void register_external_backbone(const std::string& name,
                                std::function<std::unique_ptr<ExternalBackbone>()> factory) {
  backbone_registry()[name] = std::move(factory);
}

std::unique_ptr<FeatureProvider> make_provider(const FeatureProviderSpec& spec) {
  if (!spec.frozen && spec.kind != ProviderKind::ToyCnn)
    throw ConfigError("only the toy-cnn provider may be unfrozen");
  switch (spec.kind) {
    case ProviderKind::RawColor:
      return std::make_unique<RawColorProvider>();
    case ProviderKind::ToyCnn:
      return std::make_unique<ToyCnnProvider>(spec.seed, spec.layer_names);
    case ProviderKind::PrecomputedFile:
      if (spec.directory.empty())
        throw ConfigError("precomputed-file provider requires provider_dir");
      return std::make_unique<PrecomputedProvider>(spec.directory);
    case ProviderKind::ExternalPretrained: {
      if (spec.layer_names.empty())
        throw ConfigError("external-pretrained provider requires layer names");
      auto& registry = backbone_registry();
      auto it = registry.find(spec.external_name);
      if (it == registry.end())
        throw ConfigError("no external backbone registered under `" + spec.external_name + "`");
      return std::make_unique<ExternalProvider>(it->second(), spec.layer_names);
    }
  }
  throw ConfigError("unknown provider kind");
}

void save_features(const std::filesystem::path& path, const FeatureMap& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(features.channels()));
  put_u32(out, static_cast<std::uint32_t>(features.height()));
  put_u32(out, static_cast<std::uint32_t>(features.width()));
  out.write(reinterpret_cast<const char*>(features.data.data()),
            static_cast<std::streamsize>(features.data.size() * sizeof(double)));
  if (!out) throw IoError("short write to feature file " + path.string());
}

FeatureMap load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a PFEA feature file: " + path.string());
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw IoError("unsupported PFEA version " + std::to_string(version) + " in " + path.string());
  const std::size_t d = get_u32(in, path);
  const std::size_t h = get_u32(in, path);
  const std::size_t w = get_u32(in, path);
  FeatureMap f;
  f.data = Tensor({d, h, w});
  in.read(reinterpret_cast<char*>(f.data.data()),
          static_cast<std::streamsize>(f.data.size() * sizeof(double)));
  if (!in) throw IoError("truncated feature file " + path.string());
  return f;
}

FeatureMap concat_to_coarsest(const std::vector<FeatureMap>& layers) {
  if (layers.empty()) throw std::invalid_argument("no feature layers to concatenate");
  std::size_t h = layers[0].height(), w = layers[0].width();
  for (const FeatureMap& f : layers) {
    if (f.height() * f.width() < h * w) {
      h = f.height();
      w = f.width();
    }
  }
  std::size_t d_total = 0;
  for (const FeatureMap& f : layers) d_total += f.channels();
  FeatureMap out;
  out.data = Tensor({d_total, h, w});
  std::size_t offset = 0;
  for (const FeatureMap& f : layers) {
    Tensor pooled;
    if (f.height() == h && f.width() == w) {
      pooled = f.data;
    } else {
      const auto plan = nn::make_area_pool(f.height(), f.width(), h, w);
      nn::area_pool_forward(plan, f.data, pooled);
    }
    std::copy(pooled.data(), pooled.data() + pooled.size(), out.data.data() + offset);
    offset += pooled.size();
  }
  return out;
}

}  // namespace partscope
