#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "partscope/baselines.hpp"
#include "partscope/dataset.hpp"
#include "partscope/features.hpp"
#include "partscope/metrics.hpp"
#include "partscope/segmenter.hpp"

namespace partscope::pipeline {

// Full-image prediction: part labels on the foreground, the background class
// (= K) outside. Ground-truth label grids from the synthetic generator use
// the same convention, but only label co-occurrence matters to the metrics.
LabelGrid predict_labels(const ToyUnet& model, const Image& image, const ForegroundMask& fg);

// Dense background class for grids that mark background as ignore.
LabelGrid with_background_class(const LabelGrid& grid, int background_label);

// NMI/ARI (full + foreground-restricted) pooled over the split, plus the
// keypoint-regression protocol (fit on train, scored on test). Emits a
// per-class breakdown when the samples span several classes.
metrics::EvalReport evaluate_model(const ToyUnet& model,
                                   const std::vector<data::Sample>& train_samples,
                                   const std::vector<data::Sample>& test_samples);

struct KmeansBaselineOutput {
  Tensor centroids;
  metrics::EvalReport report;
  std::vector<LabelGrid> test_labels;
};

// Feature-clustering baseline: pools up to `max_points` foreground feature
// vectors across the training split, fits K-means, assigns test pixels, and
// scores through the identical metric pipeline.
KmeansBaselineOutput run_kmeans_baseline(const FeatureProvider& provider,
                                         const std::vector<data::Sample>& train_samples,
                                         const std::vector<data::Sample>& test_samples, int k,
                                         std::uint64_t seed,
                                         std::size_t max_points = 100000);

// Degenerate landmark baselines; the report carries kp_error only (they
// produce no segmentation).
metrics::EvalReport run_landmark_baseline(metrics::LandmarkBaseline kind,
                                          const std::vector<data::Sample>& train_samples,
                                          const std::vector<data::Sample>& test_samples,
                                          int keypoint_index = 0);

// Per-part color overlays (fixed palette, background gray); returns the
// number of files written = min(n, samples).
std::size_t write_overlays(const ToyUnet& model, const std::vector<data::Sample>& samples,
                           const std::filesystem::path& out_dir, std::size_t n);

}  // namespace partscope::pipeline
