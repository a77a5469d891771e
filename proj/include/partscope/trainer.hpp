#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partscope/config.hpp"
#include "partscope/core_types.hpp"
#include "partscope/dataset.hpp"
#include "partscope/features.hpp"
#include "partscope/losses.hpp"
#include "partscope/rng.hpp"
#include "partscope/segmenter.hpp"
#include "partscope/transforms.hpp"

namespace partscope {

enum class Optimizer { Sgd, SgdMomentum, AdaptiveMoments };

struct TrainConfig {
  int k_parts = 4;
  int steps = 1500;
  int batch_size = 8;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::AdaptiveMoments;
  LossWeights weights;
  bool use_l2_instead_of_contrastive = false;
  bool contrastive_same_image_views = false;
  bool contrastive_same_image_negatives = false;
  bool normalize_descriptors = true;
  AugmentationRanges aug;
  FeatureProviderSpec provider;
  std::uint64_t seed = 1;
  int checkpoint_interval = 500;
};

// Parses the flat training config; unknown keys are rejected, constraint
// violations raise ConfigError naming the offending key.
TrainConfig train_config_from_config(KeyValueConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);
void validate_train_config(const TrainConfig& cfg);

// Uniform target image per (n, k) among valid candidates i != n; anchors
// without a candidate are marked skipped.
TargetAssignment sample_targets(std::size_t n_images, std::size_t n_parts,
                                const std::vector<std::uint8_t>& valid, Rng& rng);

// One batch item, at full resolution, features precomputed by the frozen
// provider.
struct TrainItem {
  const Tensor* image = nullptr;
  const ForegroundMask* fg = nullptr;
  const FeatureMap* features = nullptr;
};

struct TrainerState {
  ToyUnet model;
  long long step = 0;
  // flat optimizer slots aligned with the model's parameter order
  std::vector<Tensor> slot_m, slot_v;

  explicit TrainerState(ToyUnet m);
};

TrainerState make_trainer_state(const TrainConfig& cfg);

struct StepResult {
  LossBreakdown losses;
  int dropped_items = 0;
  std::size_t skipped_anchors = 0;
};

// One optimizer update over the batch. Items with an empty foreground are
// dropped with a warning count; the step needs >= 2 survivors (>= 1 when the
// contrastive weight is zero). The same provider that produced `features`
// must be passed for the transformed view when the same-image-views variant
// is on.
StepResult train_step(TrainerState& state, const std::vector<TrainItem>& batch,
                      const TrainConfig& cfg, const FeatureProvider* provider = nullptr);

struct TrainOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  long long final_step = 0;
};

// Full loop: epoch-shuffled batches, per-step loss CSV, periodic checkpoints
// with optimizer state, optional resume (continues the step counter).
TrainOutput train(const TrainConfig& cfg, const data::Manifest& manifest,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::string>& class_filter = std::nullopt,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                  const std::optional<std::filesystem::path>& saliency_dir = std::nullopt);

// Trainer checkpoints are segmenter checkpoints plus "opt.*" blocks.
void save_trainer_checkpoint(const std::filesystem::path& path, const TrainerState& state);
TrainerState load_trainer_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg);

}  // namespace partscope
