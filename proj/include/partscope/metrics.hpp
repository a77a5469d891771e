#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partscope/core_types.hpp"
#include "partscope/tensor.hpp"

namespace partscope::metrics {

// Counts of (predicted label, ground-truth label) co-occurrences over scored
// pixels. Ignore labels and (optionally) background-restricted pixels are
// excluded before counting; labels need not use the same range on both sides.
class ContingencyTable {
 public:
  void add(int pred, int gt);
  void merge(const ContingencyTable& other);

  std::size_t total() const { return total_; }
  std::size_t count(int pred, int gt) const;
  std::vector<int> pred_labels() const;
  std::vector<int> gt_labels() const;
  std::size_t pred_marginal(int pred) const;
  std::size_t gt_marginal(int gt) const;

 private:
  std::map<std::pair<int, int>, std::size_t> counts_;
  std::map<int, std::size_t> pred_marginals_, gt_marginals_;
  std::size_t total_ = 0;
};

// Pixels where both labelings are non-ignore and, when given, inside the
// foreground. Throws when no pixel is scored.
ContingencyTable contingency(const LabelGrid& pred, const LabelGrid& gt,
                             const ForegroundMask* restrict = nullptr);
ContingencyTable contingency(const LabelGrid& pred, const SparseLabels& gt,
                             const ForegroundMask* restrict = nullptr);

// Normalized mutual information, normalized by the arithmetic mean of the
// two entropies; 0 when either side has zero entropy.
double nmi(const ContingencyTable& table);

// Adjusted Rand index via the pair-counting formula; 1.0 when the adjustment
// is degenerate (single class on both sides).
double ari(const ContingencyTable& table);

// Part-mask centroids in normalized coordinates, 2K values (x, y per part);
// empty parts fall back to the image midpoint.
std::vector<double> mask_landmarks(const SoftMask& mask, const ForegroundMask& fg);

// Ordinary least squares with intercept mapping predicted landmark vectors to
// ground-truth keypoints, fit per output coordinate over images where the
// keypoint is visible. Rank-deficient designs fall back to the least-norm
// solution (with a warning counter instead of a failure).
struct RegressionFit {
  Tensor weights;      // (2L, in_dim + 1), last column is the intercept
  std::size_t in_dim = 0;
  std::size_t n_keypoints = 0;
  std::string split;
  int rank_warnings = 0;
};

RegressionFit fit_keypoint_regression(const std::vector<std::vector<double>>& pred_landmarks,
                                      const std::vector<KeypointSet>& gt,
                                      const std::string& split);

// Mean distance between regressed and ground-truth visible keypoints as a
// percentage of image width. `aspect` is H/W per image (1 for square data).
double keypoint_error(const RegressionFit& fit,
                      const std::vector<std::vector<double>>& pred_landmarks,
                      const std::vector<KeypointSet>& gt, const std::vector<double>& aspect);

enum class LandmarkBaseline { ImageMidpoint, GtKeypointCenter, SingleGtKeypoint };

// Degenerate landmark predictors used to probe the regression protocol.
// Images where the selected keypoint is invisible come back empty and must be
// dropped from the fit (callers count them as warnings).
std::vector<std::vector<double>> baseline_landmarks(LandmarkBaseline kind,
                                                    const std::vector<KeypointSet>& gt,
                                                    int keypoint_index = 0);

// Structured evaluation report: `key = value` lines, absent metrics omitted.
struct EvalReport {
  std::optional<double> nmi, ari, fg_nmi, fg_ari, kp_error;
  std::map<std::string, double> extra;  // per-class breakdown etc.
};

void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace partscope::metrics
