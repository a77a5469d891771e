#include "partscope/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "partscope/errors.hpp"
#include "partscope/image_io.hpp"
#include "partscope/losses.hpp"
#include "partscope/rng.hpp"

namespace partscope::pipeline {

namespace {

struct SplitPredictions {
  std::vector<LabelGrid> labels;              // foreground-only (ignore outside)
  std::vector<std::vector<double>> landmarks;  // 2K per image
};

SplitPredictions predict_split(const ToyUnet& model, const std::vector<data::Sample>& samples) {
  SplitPredictions out;
  out.labels.reserve(samples.size());
  out.landmarks.reserve(samples.size());
  for (const data::Sample& s : samples) {
    const SoftMask mask = model.forward(s.image.data);
    LabelGrid grid = hard_assign(mask);
    for (std::size_t u = 0; u < grid.data.size(); ++u)
      if (!s.fg.data[u]) grid.data[u] = LabelGrid::kIgnore;
    out.labels.push_back(std::move(grid));
    out.landmarks.push_back(metrics::mask_landmarks(mask, s.fg));
  }
  return out;
}

struct LabelScores {
  double nmi_full, ari_full, nmi_fg, ari_fg;
};

LabelScores score_labels(const std::vector<LabelGrid>& pred,
                         const std::vector<data::Sample>& samples, int background_label) {
  metrics::ContingencyTable full, fg;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].part_labels.has_value())
      throw ConfigError("sample `" + samples[i].id + "` has no part labels to score against");
    const LabelGrid dense = with_background_class(pred[i], background_label);
    full.merge(metrics::contingency(dense, *samples[i].part_labels));
    fg.merge(metrics::contingency(pred[i], *samples[i].part_labels, &samples[i].fg));
  }
  return {metrics::nmi(full), metrics::ari(full), metrics::nmi(fg), metrics::ari(fg)};
}

std::vector<double> aspects(const std::vector<data::Sample>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const data::Sample& s : samples)
    out.push_back(static_cast<double>(s.image.height()) / static_cast<double>(s.image.width()));
  return out;
}

std::vector<KeypointSet> keypoints_of(const std::vector<data::Sample>& samples,
                                      const char* need_for) {
  std::vector<KeypointSet> out;
  out.reserve(samples.size());
  for (const data::Sample& s : samples) {
    if (!s.keypoints.has_value())
      throw ConfigError(std::string("sample `") + s.id + "` has no keypoints (required for " +
                        need_for + ")");
    out.push_back(*s.keypoints);
  }
  return out;
}

// one-hot masks from an assignment grid, for centroid landmarks
SoftMask one_hot_mask(const LabelGrid& grid, int k) {
  SoftMask mask;
  mask.data = Tensor({static_cast<std::size_t>(k), grid.height, grid.width});
  const std::size_t hw = grid.height * grid.width;
  for (std::size_t u = 0; u < hw; ++u) {
    const int lab = grid.data[u];
    mask.data.data()[(lab >= 0 && lab < k ? static_cast<std::size_t>(lab) : 0) * hw + u] = 1.0;
  }
  return mask;
}

constexpr std::array<std::array<std::uint8_t, 3>, 12> kPalette = {{{230, 40, 40},
                                                                   {40, 100, 235},
                                                                   {40, 200, 80},
                                                                   {240, 200, 30},
                                                                   {170, 60, 220},
                                                                   {255, 140, 20},
                                                                   {30, 210, 210},
                                                                   {240, 90, 180},
                                                                   {120, 220, 40},
                                                                   {90, 60, 20},
                                                                   {150, 150, 250},
                                                                   {20, 90, 90}}};

}  // namespace

LabelGrid predict_labels(const ToyUnet& model, const Image& image, const ForegroundMask& fg) {
  const SoftMask mask = model.forward(image.data);
  LabelGrid grid = hard_assign(mask);
  for (std::size_t u = 0; u < grid.data.size(); ++u)
    if (!fg.data[u]) grid.data[u] = model.num_parts();
  return grid;
}

LabelGrid with_background_class(const LabelGrid& grid, int background_label) {
  LabelGrid out = grid;
  for (int& v : out.data)
    if (v == LabelGrid::kIgnore) v = background_label;
  return out;
}

metrics::EvalReport evaluate_model(const ToyUnet& model,
                                   const std::vector<data::Sample>& train_samples,
                                   const std::vector<data::Sample>& test_samples) {
  if (test_samples.empty()) throw ConfigError("evaluation split is empty");
  const SplitPredictions test_pred = predict_split(model, test_samples);

  metrics::EvalReport report;
  const LabelScores scores = score_labels(test_pred.labels, test_samples, model.num_parts());
  report.nmi = scores.nmi_full;
  report.ari = scores.ari_full;
  report.fg_nmi = scores.nmi_fg;
  report.fg_ari = scores.ari_fg;

  if (!train_samples.empty() && train_samples[0].keypoints.has_value()) {
    const SplitPredictions train_pred = predict_split(model, train_samples);
    const auto fit = metrics::fit_keypoint_regression(
        train_pred.landmarks, keypoints_of(train_samples, "the regression fit"), "train");
    report.kp_error = metrics::keypoint_error(
        fit, test_pred.landmarks, keypoints_of(test_samples, "the regression error"),
        aspects(test_samples));
  }

  std::set<std::string> classes;
  for (const data::Sample& s : test_samples) classes.insert(s.class_name);
  if (classes.size() > 1) {
    for (const std::string& cls : classes) {
      std::vector<LabelGrid> pred;
      std::vector<data::Sample> subset;
      for (std::size_t i = 0; i < test_samples.size(); ++i) {
        if (test_samples[i].class_name != cls) continue;
        pred.push_back(test_pred.labels[i]);
        subset.push_back(test_samples[i]);
      }
      const LabelScores cls_scores = score_labels(pred, subset, model.num_parts());
      report.extra["class." + cls + ".nmi"] = cls_scores.nmi_full;
      report.extra["class." + cls + ".ari"] = cls_scores.ari_full;
      report.extra["class." + cls + ".fg_nmi"] = cls_scores.nmi_fg;
      report.extra["class." + cls + ".fg_ari"] = cls_scores.ari_fg;
    }
  }
  return report;
}

KmeansBaselineOutput run_kmeans_baseline(const FeatureProvider& provider,
                                         const std::vector<data::Sample>& train_samples,
                                         const std::vector<data::Sample>& test_samples, int k,
                                         std::uint64_t seed, std::size_t max_points) {
  if (train_samples.empty() || test_samples.empty())
    throw ConfigError("k-means baseline needs both splits");

  // pool foreground feature vectors across the training split
  std::vector<double> pool;
  std::size_t dim = 0;
  for (const data::Sample& s : train_samples) {
    const FeatureMap f = provider.extract(s.image, s.id);
    dim = f.channels();
    const std::size_t fh = f.height(), fw = f.width();
    const PooledMask pm = reconcile_to_grid(Tensor({1, s.fg.height, s.fg.width}), s.fg, fh, fw);
    const std::size_t fhw = fh * fw;
    for (std::size_t u = 0; u < fhw; ++u) {
      if (pm.weights.data()[u] < 0.5) continue;  // cell mostly background
      for (std::size_t c = 0; c < dim; ++c) pool.push_back(f.data.data()[c * fhw + u]);
    }
  }
  std::size_t n_points = pool.size() / std::max<std::size_t>(dim, 1);
  if (n_points < static_cast<std::size_t>(k))
    throw ConfigError("k-means baseline: fewer foreground feature vectors than clusters");

  Rng rng(Rng::mix(seed, 0xBA5Eull));
  if (n_points > max_points) {
    // uniform subsample without replacement (partial Fisher-Yates over rows)
    std::vector<std::size_t> idx(n_points);
    for (std::size_t i = 0; i < n_points; ++i) idx[i] = i;
    for (std::size_t i = 0; i < max_points; ++i) {
      const std::size_t j = i + rng.index(n_points - i);
      std::swap(idx[i], idx[j]);
    }
    std::vector<double> sub(max_points * dim);
    for (std::size_t i = 0; i < max_points; ++i)
      std::copy(pool.begin() + static_cast<std::ptrdiff_t>(idx[i] * dim),
                pool.begin() + static_cast<std::ptrdiff_t>((idx[i] + 1) * dim),
                sub.begin() + static_cast<std::ptrdiff_t>(i * dim));
    pool = std::move(sub);
    n_points = max_points;
  }

  KmeansBaselineOutput out;
  const Tensor points({n_points, dim}, std::move(pool));
  out.centroids = baselines::kmeans_fit(points, k, seed).centroids;

  auto assign_split = [&](const std::vector<data::Sample>& samples) {
    std::vector<LabelGrid> labels;
    labels.reserve(samples.size());
    for (const data::Sample& s : samples) {
      const FeatureMap f = provider.extract(s.image, s.id);
      labels.push_back(baselines::kmeans_assign(out.centroids, f, s.fg));
    }
    return labels;
  };
  out.test_labels = assign_split(test_samples);

  const LabelScores scores = score_labels(out.test_labels, test_samples, k);
  out.report.nmi = scores.nmi_full;
  out.report.ari = scores.ari_full;
  out.report.fg_nmi = scores.nmi_fg;
  out.report.fg_ari = scores.ari_fg;

  if (train_samples[0].keypoints.has_value()) {
    const std::vector<LabelGrid> train_labels = assign_split(train_samples);
    std::vector<std::vector<double>> train_lm, test_lm;
    for (std::size_t i = 0; i < train_samples.size(); ++i)
      train_lm.push_back(
          metrics::mask_landmarks(one_hot_mask(train_labels[i], k), train_samples[i].fg));
    for (std::size_t i = 0; i < test_samples.size(); ++i)
      test_lm.push_back(
          metrics::mask_landmarks(one_hot_mask(out.test_labels[i], k), test_samples[i].fg));
    const auto fit = metrics::fit_keypoint_regression(
        train_lm, keypoints_of(train_samples, "the regression fit"), "train");
    out.report.kp_error = metrics::keypoint_error(
        fit, test_lm, keypoints_of(test_samples, "the regression error"), aspects(test_samples));
  }
  return out;
}

metrics::EvalReport run_landmark_baseline(metrics::LandmarkBaseline kind,
                                          const std::vector<data::Sample>& train_samples,
                                          const std::vector<data::Sample>& test_samples,
                                          int keypoint_index) {
  const std::vector<KeypointSet> train_kp = keypoints_of(train_samples, "landmark baselines");
  const std::vector<KeypointSet> test_kp = keypoints_of(test_samples, "landmark baselines");
  const auto train_lm = metrics::baseline_landmarks(kind, train_kp, keypoint_index);
  const auto test_lm = metrics::baseline_landmarks(kind, test_kp, keypoint_index);
  const auto fit = metrics::fit_keypoint_regression(train_lm, train_kp, "train");
  metrics::EvalReport report;
  report.kp_error = metrics::keypoint_error(fit, test_lm, test_kp, aspects(test_samples));
  return report;
}

std::size_t write_overlays(const ToyUnet& model, const std::vector<data::Sample>& samples,
                           const std::filesystem::path& out_dir, std::size_t n) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create overlay directory " + out_dir.string());
  const std::size_t count = std::min(n, samples.size());
  for (std::size_t i = 0; i < count; ++i) {
    const data::Sample& s = samples[i];
    const LabelGrid pred = predict_labels(model, s.image, s.fg);
    const std::size_t h = s.image.height(), w = s.image.width();
    const std::size_t hw = h * w;
    RgbImage8 img;
    img.height = h;
    img.width = w;
    img.pixels.resize(3 * hw);
    for (std::size_t u = 0; u < hw; ++u) {
      std::array<std::uint8_t, 3> color{128, 128, 128};  // background gray
      const int lab = pred.data[u];
      if (lab >= 0 && lab < model.num_parts()) color = kPalette[static_cast<std::size_t>(lab) % 12];
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = s.image.data.data()[c * hw + u] * 255.0;
        img.pixels[u * 3 + c] =
            static_cast<std::uint8_t>(std::lround(0.5 * base + 0.5 * color[c]));
      }
    }
    write_ppm(out_dir / ("overlay_" + s.id + ".ppm"), img);
  }
  return count;
}

}  // namespace partscope::pipeline
