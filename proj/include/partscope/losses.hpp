#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "partscope/core_types.hpp"
#include "partscope/features.hpp"
#include "partscope/nn_ops.hpp"
#include "partscope/tensor.hpp"
#include "partscope/transforms.hpp"

namespace partscope {

struct LossWeights {
  double lambda_f = 1.0;
  double lambda_c = 1.0;
  double lambda_v = 1.0;
  double lambda_e = 1.0;
  double tau = 0.1;
};
void validate_loss_weights(const LossWeights& w);

// Probability floor applied before logarithms in the equivariance term.
inline constexpr double kEpsProb = 1e-8;

// Foreground as real-valued pixel weights. Binary masks map to {0, 1};
// area-average pooling yields fractional coverage on coarser grids.
Tensor fg_weights(const ForegroundMask& fg);

// Soft mask and foreground pooled to the feature grid (h, w). The pooled
// mask stays on the per-pixel simplex (each cell is a convex combination).
struct PooledMask {
  Tensor mask;     // (K, h, w)
  Tensor weights;  // (h, w)
};
PooledMask reconcile_to_grid(const Tensor& mask, const ForegroundMask& fg, std::size_t h,
                             std::size_t w);

// Soft mass and mass-weighted mean feature per part over weighted pixels.
struct PartStats {
  std::vector<double> mass;          // K
  Tensor descriptors;                // (K, d); rows of empty parts are zero
  std::vector<std::uint8_t> valid;   // mass > kEpsMass
};
PartStats part_stats(const Tensor& features, const Tensor& mask, const Tensor& weights);

// Weighted mean feature of part k; nullopt when the part is empty.
std::optional<PartDescriptor> part_descriptor(const FeatureMap& features, const SoftMask& mask,
                                              const Tensor& weights, int k);

// Core kernel behind the feature- and color-consistency terms:
//   sum_k sum_u w_u m_ku || z_k - feat_u ||^2,  z_k the weighted mean.
// Empty parts contribute zero. Gradients (scaled by grad_coeff) accumulate
// into the optional buffers; the z path cancels exactly because z_k is the
// weighted-mean minimizer.
double weighted_variance_loss(const Tensor& features, const Tensor& mask, const Tensor& weights,
                              double grad_coeff = 0.0, Tensor* d_mask = nullptr,
                              Tensor* d_features = nullptr);

// Within-part feature consistency; mask and weights must already live on the
// feature grid (see reconcile_to_grid).
double feature_loss(const FeatureMap& features, const Tensor& mask, const Tensor& weights,
                    double grad_coeff = 0.0, Tensor* d_mask = nullptr,
                    Tensor* d_features = nullptr);

// Per-part color consistency at full image resolution.
double visual_loss(const Image& image, const SoftMask& mask, const ForegroundMask& fg,
                   double grad_coeff = 0.0, Tensor* d_mask = nullptr);

struct BatchDescriptors {
  std::size_t n_images = 0, n_parts = 0, dim = 0;
  Tensor z;                         // (N, K, d)
  std::vector<std::uint8_t> valid;  // N*K
  bool is_valid(std::size_t n, std::size_t k) const { return valid[n * n_parts + k] != 0; }
};
BatchDescriptors make_batch_descriptors(const std::vector<PartStats>& stats);

// Target image index per (n, k); kSkipped marks anchors without a valid
// target.
struct TargetAssignment {
  static constexpr int kSkipped = -1;
  std::size_t n_images = 0, n_parts = 0;
  std::vector<int> target;  // N*K
  int at(std::size_t n, std::size_t k) const { return target[n * n_parts + k]; }
};

struct ContrastiveOptions {
  double tau = 0.1;
  bool normalize = true;                    // l2-normalize descriptors before dot products
  bool include_same_image_negatives = false;  // add (i = n, j != k) pairs to the negative set
};

struct ContrastiveResult {
  double value = 0.0;
  std::size_t anchors = 0;
  std::size_t skipped = 0;  // anchors without a usable target
};

// InfoNCE over part descriptors. The positive is z_k of the target image (or
// of `target_pool` when given, as in the same-image-views variant); negatives
// are different-part descriptors of other images, exactly the double sum
// (j != k, i != n). Gradients flow into every descriptor involved, never
// through the target sampling.
ContrastiveResult contrastive_loss(const BatchDescriptors& batch, const TargetAssignment& targets,
                                   const ContrastiveOptions& opts, double grad_coeff = 0.0,
                                   Tensor* d_z = nullptr, Tensor* d_z_target_pool = nullptr,
                                   const BatchDescriptors* target_pool = nullptr);

// Ablation variant: squared distance between anchor and target descriptors.
ContrastiveResult l2_descriptor_loss(const BatchDescriptors& batch,
                                     const TargetAssignment& targets, bool normalize,
                                     double grad_coeff = 0.0, Tensor* d_z = nullptr,
                                     Tensor* d_z_target_pool = nullptr,
                                     const BatchDescriptors* target_pool = nullptr);

// Symmetrized per-pixel KL between the warped original mask and the mask of
// the transformed image, over pixels valid under the warp. Zero iff the two
// agree there. Throws when the warp leaves no valid pixel.
double equivariance_loss(const SoftMask& mask_orig, const SoftMask& mask_transformed,
                         const TransformSpec& t, double grad_coeff = 0.0,
                         Tensor* d_orig = nullptr, Tensor* d_transformed = nullptr);

struct LossBreakdown {
  double total = 0.0, f = 0.0, c = 0.0, v = 0.0, e = 0.0;
};

// One batch item as seen by the overall objective. The transformed-view
// fields are only needed for the terms that use them.
struct SampleInputs {
  const Tensor* image = nullptr;              // (3, H, W)
  const ForegroundMask* fg = nullptr;         // (H, W), nonempty
  const Tensor* mask = nullptr;               // f(I), (K, H, W)
  const FeatureMap* features = nullptr;       // phi(I)
  const TransformSpec* transform = nullptr;   // for the equivariance term
  const Tensor* mask_transformed = nullptr;   // f(T(I))
  const FeatureMap* features_transformed = nullptr;  // phi(T(I)), same-image-views only
  const ForegroundMask* fg_transformed = nullptr;    // warped fg, same-image-views only
};

struct SampleGrads {
  Tensor d_mask;              // (K, H, W)
  Tensor d_mask_transformed;  // (K, H, W), used when the e-term or view targets are active
  Tensor d_features;          // (d, h, w), filled only when requested
};

struct TotalLossOptions {
  LossWeights weights;
  bool normalize_descriptors = true;
  bool include_same_image_negatives = false;
  bool use_l2_instead_of_contrastive = false;
  bool same_image_views = false;  // contrastive targets come from the transformed view
  bool want_feature_grads = false;
};

// Weighted sum of the four objectives with per-term breakdown. Per-image
// terms are averaged over the batch; a zero weight skips its term entirely.
LossBreakdown total_loss(const std::vector<SampleInputs>& batch, const TargetAssignment& targets,
                         const TotalLossOptions& opts, std::vector<SampleGrads>* grads = nullptr);

}  // namespace partscope
