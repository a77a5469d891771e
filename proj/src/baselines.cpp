#include "partscope/baselines.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "partscope/errors.hpp"
#include "partscope/parallel.hpp"
#include "partscope/rng.hpp"

namespace partscope::baselines {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = a[c] - b[c];
    s += diff * diff;
  }
  return s;
}

// D^2-weighted seeding
Tensor seed_centroids(const Tensor& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  Tensor centroids({k, d});
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.index(n);
  std::copy(points.data() + first * d, points.data() + (first + 1) * d, centroids.data());
  for (std::size_t c = 1; c < k; ++c) {
    const double* prev = centroids.data() + (c - 1) * d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], sq_dist(points.data() + i * d, prev, d));
      total += dist[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist[i];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = rng.index(n);
    }
    std::copy(points.data() + chosen * d, points.data() + (chosen + 1) * d,
              centroids.data() + c * d);
  }
  return centroids;
}

}  // namespace

KmeansResult kmeans_fit(const Tensor& points, int k, std::uint64_t seed, int max_iters) {
  if (points.rank() != 2) throw std::invalid_argument("kmeans_fit expects (n, d) samples");
  const std::size_t n = points.dim(0), d = points.dim(1);
  const auto kk = static_cast<std::size_t>(k);
  if (k < 1 || n < kk) throw std::invalid_argument("kmeans_fit needs at least K samples");

  Rng rng(seed);
  KmeansResult result;
  result.centroids = seed_centroids(points, kk, rng);

  std::vector<int> assign(n, -1);
  std::vector<int> prev_assign(n, -2);
  double prev_inertia = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iters; ++iter) {
    result.iterations = iter + 1;
    // assignment step
    const double* cp = result.centroids.data();
    result.inertia = par::block_sum(n, [&](std::size_t i) {
      const double* p = points.data() + i * d;
      int best = 0;
      double best_d = sq_dist(p, cp, d);
      for (std::size_t c = 1; c < kk; ++c) {
        const double dd = sq_dist(p, cp + c * d, d);
        if (dd < best_d) {
          best_d = dd;
          best = static_cast<int>(c);
        }
      }
      assign[i] = best;
      return best_d;
    });
    if (result.inertia > prev_inertia * (1.0 + 1e-12))
      throw NumericError("kmeans inertia increased across a Lloyd iteration");
    prev_inertia = result.inertia;
    if (assign == prev_assign) break;
    prev_assign = assign;

    // update step: deterministic block accumulation of sums and counts
    std::vector<double> sums(kk * d, 0.0);
    std::vector<double> counts(kk, 0.0);
    par::block_sum_rows(n, kk * d, sums.data(), [&](std::size_t i, double* acc) {
      const double* p = points.data() + i * d;
      double* row = acc + static_cast<std::size_t>(assign[i]) * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += p[c];
    });
    par::block_sum_rows(n, kk, counts.data(), [&](std::size_t i, double* acc) {
      acc[static_cast<std::size_t>(assign[i])] += 1.0;
    });

    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0.0) {
        for (std::size_t cc = 0; cc < d; ++cc)
          result.centroids.data()[c * d + cc] = sums[c * d + cc] / counts[c];
      } else {
        // re-seed from the point farthest from its assigned centroid
        double worst = -1.0;
        std::size_t worst_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dd = sq_dist(points.data() + i * d,
                                    result.centroids.data() +
                                        static_cast<std::size_t>(assign[i]) * d,
                                    d);
          if (dd > worst) {
            worst = dd;
            worst_i = i;
          }
        }
        std::copy(points.data() + worst_i * d, points.data() + (worst_i + 1) * d,
                  result.centroids.data() + c * d);
        prev_inertia = std::numeric_limits<double>::infinity();  // next sweep re-baselines
        prev_assign.assign(n, -2);
      }
    }
  }
  return result;
}

LabelGrid kmeans_assign(const Tensor& centroids, const FeatureMap& features,
                        const ForegroundMask& fg) {
  const std::size_t k = centroids.dim(0), d = centroids.dim(1);
  if (features.channels() != d)
    throw std::invalid_argument("kmeans_assign: feature dimension does not match centroids");
  const std::size_t h = fg.height, w = fg.width;
  const std::size_t fh = features.height(), fw = features.width();
  LabelGrid out;
  out.height = h;
  out.width = w;
  out.data.assign(h * w, LabelGrid::kIgnore);
  const double* fp = features.data.data();
  const std::size_t fhw = fh * fw;
  par::parallel_for(h, [&](std::size_t y) {
    const std::size_t ys = y * fh / h;
    for (std::size_t x = 0; x < w; ++x) {
      if (!fg.at(y, x)) continue;
      const std::size_t xs = x * fw / w;
      const std::size_t fu = ys * fw + xs;
      int best = 0;
      double best_d = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        double dd = 0.0;
        for (std::size_t cc = 0; cc < d; ++cc) {
          const double diff = fp[cc * fhw + fu] - centroids.data()[c * d + cc];
          dd += diff * diff;
        }
        if (c == 0 || dd < best_d) {
          best_d = dd;
          best = static_cast<int>(c);
        }
      }
      out.at(y, x) = best;
    }
  });
  return out;
}

}  // namespace partscope::baselines
