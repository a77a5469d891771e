#include "partscope/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "partscope/errors.hpp"
#include "partscope/losses.hpp"

namespace partscope::metrics {

void ContingencyTable::add(int pred, int gt) {
  ++counts_[{pred, gt}];
  ++pred_marginals_[pred];
  ++gt_marginals_[gt];
  ++total_;
}

void ContingencyTable::merge(const ContingencyTable& other) {
  for (const auto& [key, n] : other.counts_) counts_[key] += n;
  for (const auto& [key, n] : other.pred_marginals_) pred_marginals_[key] += n;
  for (const auto& [key, n] : other.gt_marginals_) gt_marginals_[key] += n;
  total_ += other.total_;
}

std::size_t ContingencyTable::count(int pred, int gt) const {
  auto it = counts_.find({pred, gt});
  return it == counts_.end() ? 0 : it->second;
}

std::vector<int> ContingencyTable::pred_labels() const {
  std::vector<int> out;
  for (const auto& [key, n] : pred_marginals_) out.push_back(key);
  return out;
}

std::vector<int> ContingencyTable::gt_labels() const {
  std::vector<int> out;
  for (const auto& [key, n] : gt_marginals_) out.push_back(key);
  return out;
}

std::size_t ContingencyTable::pred_marginal(int pred) const {
  auto it = pred_marginals_.find(pred);
  return it == pred_marginals_.end() ? 0 : it->second;
}

std::size_t ContingencyTable::gt_marginal(int gt) const {
  auto it = gt_marginals_.find(gt);
  return it == gt_marginals_.end() ? 0 : it->second;
}

ContingencyTable contingency(const LabelGrid& pred, const LabelGrid& gt,
                             const ForegroundMask* restrict) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("contingency: label grids must be aligned");
  if (restrict != nullptr && (restrict->height != pred.height || restrict->width != pred.width))
    throw std::invalid_argument("contingency: foreground restriction must be aligned");
  ContingencyTable table;
  for (std::size_t u = 0; u < pred.data.size(); ++u) {
    if (pred.data[u] == LabelGrid::kIgnore || gt.data[u] == LabelGrid::kIgnore) continue;
    if (restrict != nullptr && !restrict->data[u]) continue;
    table.add(pred.data[u], gt.data[u]);
  }
  if (table.total() == 0) throw std::invalid_argument("contingency: no scored pixels");
  return table;
}

ContingencyTable contingency(const LabelGrid& pred, const SparseLabels& gt,
                             const ForegroundMask* restrict) {
  ContingencyTable table;
  for (const PixelLabel& pl : gt) {
    if (pl.y >= pred.height || pl.x >= pred.width)
      throw std::invalid_argument("contingency: sparse label outside the grid");
    if (pl.label < 0) continue;
    const int p = pred.at(pl.y, pl.x);
    if (p == LabelGrid::kIgnore) continue;
    if (restrict != nullptr && !restrict->at(pl.y, pl.x)) continue;
    table.add(p, pl.label);
  }
  if (table.total() == 0) throw std::invalid_argument("contingency: no scored pixels");
  return table;
}

double nmi(const ContingencyTable& table) {
  const double n = static_cast<double>(table.total());
  if (table.total() == 0) throw std::invalid_argument("nmi of an empty table");
  double h_pred = 0.0, h_gt = 0.0, mi = 0.0;
  for (int p : table.pred_labels()) {
    const double pp = static_cast<double>(table.pred_marginal(p)) / n;
    if (pp > 0.0) h_pred -= pp * std::log(pp);
  }
  for (int g : table.gt_labels()) {
    const double pg = static_cast<double>(table.gt_marginal(g)) / n;
    if (pg > 0.0) h_gt -= pg * std::log(pg);
  }
  for (int p : table.pred_labels()) {
    for (int g : table.gt_labels()) {
      const std::size_t c = table.count(p, g);
      if (c == 0) continue;
      const double pj = static_cast<double>(c) / n;
      const double pp = static_cast<double>(table.pred_marginal(p)) / n;
      const double pg = static_cast<double>(table.gt_marginal(g)) / n;
      mi += pj * std::log(pj / (pp * pg));
    }
  }
  const double norm = 0.5 * (h_pred + h_gt);
  if (h_pred == 0.0 || h_gt == 0.0 || norm <= 0.0) return 0.0;
  return mi / norm;
}

double ari(const ContingencyTable& table) {
  if (table.total() < 2) throw std::invalid_argument("ari needs at least two scored pixels");
  auto choose2 = [](double m) { return m * (m - 1.0) / 2.0; };
  double index = 0.0;
  for (int p : table.pred_labels())
    for (int g : table.gt_labels()) index += choose2(static_cast<double>(table.count(p, g)));
  double a = 0.0, b = 0.0;
  for (int p : table.pred_labels()) a += choose2(static_cast<double>(table.pred_marginal(p)));
  for (int g : table.gt_labels()) b += choose2(static_cast<double>(table.gt_marginal(g)));
  const double all = choose2(static_cast<double>(table.total()));
  const double expected = a * b / all;
  const double maximum = 0.5 * (a + b);
  if (maximum == expected) return 1.0;  // single class on both sides
  return (index - expected) / (maximum - expected);
}

std::vector<double> mask_landmarks(const SoftMask& mask, const ForegroundMask& fg) {
  const std::size_t k = mask.parts(), h = mask.height(), w = mask.width();
  if (fg.height != h || fg.width != w)
    throw std::invalid_argument("mask_landmarks: foreground shape mismatch");
  std::vector<double> out(2 * k);
  const double* mp = mask.data.data();
  const std::size_t hw = h * w;
  for (std::size_t part = 0; part < k; ++part) {
    double mass = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t u = 0; u < hw; ++u) {
      if (!fg.data[u]) continue;
      const double m = mp[part * hw + u];
      mass += m;
      sx += m * ((static_cast<double>(u % w) + 0.5) / static_cast<double>(w));
      sy += m * ((static_cast<double>(u / w) + 0.5) / static_cast<double>(h));
    }
    if (mass > kEpsMass) {
      out[2 * part] = sx / mass;
      out[2 * part + 1] = sy / mass;
    } else {
      out[2 * part] = 0.5;  // image midpoint fallback
      out[2 * part + 1] = 0.5;
    }
  }
  return out;
}

RegressionFit fit_keypoint_regression(const std::vector<std::vector<double>>& pred_landmarks,
                                      const std::vector<KeypointSet>& gt,
                                      const std::string& split) {
  if (pred_landmarks.size() != gt.size())
    throw std::invalid_argument("regression fit: prediction/annotation count mismatch");
  std::size_t in_dim = 0, n_kp = 0;
  for (std::size_t i = 0; i < pred_landmarks.size(); ++i) {
    if (pred_landmarks[i].empty()) continue;
    if (in_dim == 0) {
      in_dim = pred_landmarks[i].size();
      n_kp = gt[i].size();
    } else if (pred_landmarks[i].size() != in_dim || gt[i].size() != n_kp) {
      throw std::invalid_argument("regression fit: inconsistent landmark dimensions");
    }
  }
  if (in_dim == 0) throw std::invalid_argument("regression fit: no usable images");

  RegressionFit fit;
  fit.in_dim = in_dim;
  fit.n_keypoints = n_kp;
  fit.split = split;
  fit.weights = Tensor({2 * n_kp, in_dim + 1});

  for (std::size_t j = 0; j < n_kp; ++j) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (!pred_landmarks[i].empty() && gt[i][j].visible) rows.push_back(i);
    if (rows.size() < in_dim + 1) ++fit.rank_warnings;
    if (rows.empty()) continue;

    Eigen::MatrixXd x(rows.size(), in_dim + 1);
    Eigen::MatrixXd y(rows.size(), 2);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < in_dim; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = pred_landmarks[rows[r]][c];
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(in_dim)) = 1.0;
      y(static_cast<Eigen::Index>(r), 0) = gt[rows[r]][j].x;
      y(static_cast<Eigen::Index>(r), 1) = gt[rows[r]][j].y;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.rank() < static_cast<Eigen::Index>(in_dim + 1)) ++fit.rank_warnings;
    const Eigen::MatrixXd w = svd.solve(y);  // least-norm when rank deficient
    for (std::size_t c = 0; c <= in_dim; ++c) {
      fit.weights(2 * j, c) = w(static_cast<Eigen::Index>(c), 0);
      fit.weights(2 * j + 1, c) = w(static_cast<Eigen::Index>(c), 1);
    }
  }
  return fit;
}

double keypoint_error(const RegressionFit& fit,
                      const std::vector<std::vector<double>>& pred_landmarks,
                      const std::vector<KeypointSet>& gt, const std::vector<double>& aspect) {
  if (pred_landmarks.size() != gt.size())
    throw std::invalid_argument("keypoint error: prediction/annotation count mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred_landmarks[i].empty()) continue;
    if (pred_landmarks[i].size() != fit.in_dim)
      throw std::invalid_argument("keypoint error: landmark dimension mismatch with fit");
    const double a = aspect.empty() ? 1.0 : aspect[i];
    for (std::size_t j = 0; j < gt[i].size() && j < fit.n_keypoints; ++j) {
      if (!gt[i][j].visible) continue;
      double px = fit.weights(2 * j, fit.in_dim);
      double py = fit.weights(2 * j + 1, fit.in_dim);
      for (std::size_t c = 0; c < fit.in_dim; ++c) {
        px += fit.weights(2 * j, c) * pred_landmarks[i][c];
        py += fit.weights(2 * j + 1, c) * pred_landmarks[i][c];
      }
      const double dx = px - gt[i][j].x;
      const double dy = (py - gt[i][j].y) * a;
      sum += std::sqrt(dx * dx + dy * dy);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("keypoint error: no visible keypoints to score");
  return 100.0 * sum / static_cast<double>(n);
}

std::vector<std::vector<double>> baseline_landmarks(LandmarkBaseline kind,
                                                    const std::vector<KeypointSet>& gt,
                                                    int keypoint_index) {
  std::vector<std::vector<double>> out(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    switch (kind) {
      case LandmarkBaseline::ImageMidpoint:
        out[i] = {0.5, 0.5};
        break;
      case LandmarkBaseline::GtKeypointCenter: {
        double sx = 0.0, sy = 0.0;
        std::size_t n = 0;
        for (const Keypoint& kp : gt[i]) {
          if (!kp.visible) continue;
          sx += kp.x;
          sy += kp.y;
          ++n;
        }
        if (n > 0) out[i] = {sx / static_cast<double>(n), sy / static_cast<double>(n)};
        break;  // images without visible keypoints stay empty (dropped)
      }
      case LandmarkBaseline::SingleGtKeypoint: {
        const auto j = static_cast<std::size_t>(keypoint_index);
        if (j >= gt[i].size())
          throw std::invalid_argument("selected keypoint index out of range");
        if (gt[i][j].visible) out[i] = {gt[i][j].x, gt[i][j].y};
        break;
      }
    }
  }
  return out;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  char buf[64];
  auto emit = [&](const char* key, const std::optional<double>& v) {
    if (!v.has_value()) return;
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    out << key << " = " << buf << "\n";
  };
  emit("nmi", report.nmi);
  emit("ari", report.ari);
  emit("fg_nmi", report.fg_nmi);
  emit("fg_ari", report.fg_ari);
  emit("kp_error", report.kp_error);
  for (const auto& [key, v] : report.extra) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << key << " = " << buf << "\n";
  }
  if (!out) throw IoError("short write to report " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  EvalReport report;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    const double v = std::stod(line.substr(eq + 1));
    if (key == "nmi") {
      report.nmi = v;
    } else if (key == "ari") {
      report.ari = v;
    } else if (key == "fg_nmi") {
      report.fg_nmi = v;
    } else if (key == "fg_ari") {
      report.fg_ari = v;
    } else if (key == "kp_error") {
      report.kp_error = v;
    } else {
      report.extra[key] = v;
    }
  }
  return report;
}

}  // namespace partscope::metrics
