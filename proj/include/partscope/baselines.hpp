#pragma once

#include <cstdint>

#include "partscope/core_types.hpp"
#include "partscope/tensor.hpp"

namespace partscope::baselines {

struct KmeansResult {
  Tensor centroids;  // (K, d)
  double inertia = 0.0;
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding over row-vector samples (n, d).
// Converges when assignments stop changing or after max_iters sweeps; empty
// clusters are re-seeded from the point farthest from its centroid. Inertia
// is checked to be non-increasing every iteration.
KmeansResult kmeans_fit(const Tensor& points, int k, std::uint64_t seed, int max_iters = 300);

// Nearest-centroid labels on foreground pixels; the feature grid is upsampled
// to the mask resolution by nearest neighbor, background pixels are ignore.
// Ties break toward the smallest centroid index.
LabelGrid kmeans_assign(const Tensor& centroids, const FeatureMap& features,
                        const ForegroundMask& fg);

}  // namespace partscope::baselines
