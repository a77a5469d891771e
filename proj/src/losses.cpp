#include "partscope/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "partscope/errors.hpp"
#include "partscope/parallel.hpp"

namespace partscope {

namespace {

double weight_total(const Tensor& weights) {
  return par::block_sum(weights.size(), [&](std::size_t u) { return weights.data()[u]; });
}

// sum over valid pixels of the symmetrized KL between two clamped per-pixel
// distributions; gradients gated by the clamp
double sym_kl_core(const Tensor& p, const Tensor& q, const std::vector<std::uint8_t>& valid,
                   double grad_coeff, Tensor* d_p, Tensor* d_q) {
  const std::size_t k = p.dim(0), hw = p.dim(1) * p.dim(2);
  const double* pp = p.data();
  const double* qp = q.data();
  const double value = par::block_sum(hw, [&](std::size_t u) {
    if (!valid[u]) return 0.0;
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double pc = std::clamp(pp[c * hw + u], kEpsProb, 1.0);
      const double qc = std::clamp(qp[c * hw + u], kEpsProb, 1.0);
      const double lr = std::log(pc) - std::log(qc);
      acc += pc * lr - qc * lr;
    }
    return acc;
  });
  if (grad_coeff != 0.0 && (d_p != nullptr || d_q != nullptr)) {
    par::parallel_for_blocked(hw, [&](std::size_t begin, std::size_t end) {
      for (std::size_t u = begin; u < end; ++u) {
        if (!valid[u]) continue;
        for (std::size_t c = 0; c < k; ++c) {
          const double praw = pp[c * hw + u];
          const double qraw = qp[c * hw + u];
          const double pc = std::clamp(praw, kEpsProb, 1.0);
          const double qc = std::clamp(qraw, kEpsProb, 1.0);
          const double lr = std::log(pc) - std::log(qc);
          if (d_p != nullptr && praw > kEpsProb && praw <= 1.0)
            d_p->data()[c * hw + u] += grad_coeff * (lr + 1.0 - qc / pc);
          if (d_q != nullptr && qraw > kEpsProb && qraw <= 1.0)
            d_q->data()[c * hw + u] += grad_coeff * (-lr + 1.0 - pc / qc);
        }
      }
    });
  }
  return value;
}

double equivariance_core(const Tensor& mask_orig, const Tensor& mask_transformed,
                         const TransformSpec& t, double grad_coeff, Tensor* d_orig,
                         Tensor* d_transformed) {
  if (!mask_orig.same_shape(mask_transformed))
    throw std::invalid_argument("equivariance: mask shapes differ");
  WarpResult warped = apply_geometric(t, mask_orig, Interp::Bilinear);
  if (warped.valid_count == 0) throw std::invalid_argument("degenerate transform");

  Tensor d_warped;
  const bool want = grad_coeff != 0.0 && (d_orig != nullptr || d_transformed != nullptr);
  if (want && d_orig != nullptr) d_warped = Tensor(mask_orig.shape());
  const double value =
      sym_kl_core(warped.data, mask_transformed, warped.valid, want ? grad_coeff : 0.0,
                  d_orig != nullptr ? &d_warped : nullptr, d_transformed);
  if (want && d_orig != nullptr)
    apply_geometric_backward(t, d_warped, warped.valid, Interp::Bilinear, *d_orig);
  return value;
}

struct NormalizedBatch {
  Tensor zhat;                // (N, K, d)
  std::vector<double> norms;  // N*K, 1.0 when normalization is off
};

NormalizedBatch normalize_batch(const BatchDescriptors& batch, bool normalize) {
  NormalizedBatch out;
  out.zhat = batch.z;
  out.norms.assign(batch.n_images * batch.n_parts, 1.0);
  if (!normalize) return out;
  const std::size_t d = batch.dim;
  for (std::size_t a = 0; a < batch.n_images * batch.n_parts; ++a) {
    if (!batch.valid[a]) continue;
    double* row = out.zhat.data() + a * d;
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) norm += row[c] * row[c];
    norm = std::sqrt(norm);
    if (norm < 1e-300) norm = 1.0;
    for (std::size_t c = 0; c < d; ++c) row[c] /= norm;
    out.norms[a] = norm;
  }
  return out;
}

// d_z += coeff * (I - zhat zhat^T) d_zhat / ||z||, the gradient through the
// l2 normalization (identity when normalization is off).
void denormalize_grads(const BatchDescriptors& batch, const NormalizedBatch& nb, bool normalize,
                       const Tensor& d_zhat, double coeff, Tensor& d_z) {
  const std::size_t d = batch.dim;
  for (std::size_t a = 0; a < batch.n_images * batch.n_parts; ++a) {
    if (!batch.valid[a]) continue;
    const double* g = d_zhat.data() + a * d;
    double* dst = d_z.data() + a * d;
    if (!normalize) {
      for (std::size_t c = 0; c < d; ++c) dst[c] += coeff * g[c];
      continue;
    }
    const double* zh = nb.zhat.data() + a * d;
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += g[c] * zh[c];
    const double inv = 1.0 / nb.norms[a];
    for (std::size_t c = 0; c < d; ++c) dst[c] += coeff * (g[c] - dot * zh[c]) * inv;
  }
}

}  // namespace

void validate_loss_weights(const LossWeights& w) {
  if (w.tau <= 0.0) throw ConfigError("tau must be positive");
  for (double l : {w.lambda_f, w.lambda_c, w.lambda_v, w.lambda_e})
    if (l < 0.0 || !std::isfinite(l)) throw ConfigError("loss weights must be non-negative");
  if (w.lambda_f == 0.0 && w.lambda_c == 0.0 && w.lambda_v == 0.0 && w.lambda_e == 0.0)
    throw ConfigError("at least one loss weight must be positive");
}

Tensor fg_weights(const ForegroundMask& fg) {
  Tensor w({fg.height, fg.width});
  for (std::size_t u = 0; u < fg.data.size(); ++u) w.data()[u] = fg.data[u] ? 1.0 : 0.0;
  return w;
}

PooledMask reconcile_to_grid(const Tensor& mask, const ForegroundMask& fg, std::size_t h,
                             std::size_t w) {
  const std::size_t mh = mask.dim(1), mw = mask.dim(2);
  if (fg.height != mh || fg.width != mw)
    throw std::invalid_argument("reconcile_to_grid: mask and foreground shapes differ");
  PooledMask out;
  if (mh == h && mw == w) {
    out.mask = mask;
    out.weights = fg_weights(fg);
    return out;
  }
  const auto plan = nn::make_area_pool(mh, mw, h, w);
  nn::area_pool_forward(plan, mask, out.mask);
  Tensor fgw({1, mh, mw});
  for (std::size_t u = 0; u < fg.data.size(); ++u) fgw.data()[u] = fg.data[u] ? 1.0 : 0.0;
  Tensor pooled;
  nn::area_pool_forward(plan, fgw, pooled);
  out.weights = Tensor({h, w}, std::vector<double>(pooled.data(), pooled.data() + h * w));
  return out;
}

PartStats part_stats(const Tensor& features, const Tensor& mask, const Tensor& weights) {
  const std::size_t d = features.dim(0), hw = features.dim(1) * features.dim(2);
  const std::size_t k = mask.dim(0);
  if (mask.dim(1) != features.dim(1) || mask.dim(2) != features.dim(2))
    throw std::invalid_argument("part_stats: mask not on the feature grid");
  if (weights.size() != hw) throw std::invalid_argument("part_stats: weight grid mismatch");

  PartStats stats;
  stats.mass.resize(k);
  stats.descriptors = Tensor({k, d});
  stats.valid.assign(k, 0);
  const double* mp = mask.data();
  const double* fp = features.data();
  const double* wp = weights.data();
  for (std::size_t part = 0; part < k; ++part) {
    const double* m = mp + part * hw;
    stats.mass[part] = par::block_sum(hw, [&](std::size_t u) { return wp[u] * m[u]; });
    if (stats.mass[part] <= kEpsMass) continue;
    stats.valid[part] = 1;
    double* z = stats.descriptors.data() + part * d;
    par::block_sum_rows(hw, d, z, [&](std::size_t u, double* acc) {
      const double wm = wp[u] * m[u];
      if (wm == 0.0) return;
      for (std::size_t c = 0; c < d; ++c) acc[c] += wm * fp[c * hw + u];
    });
    for (std::size_t c = 0; c < d; ++c) z[c] /= stats.mass[part];
  }
  return stats;
}

std::optional<PartDescriptor> part_descriptor(const FeatureMap& features, const SoftMask& mask,
                                              const Tensor& weights, int k) {
  if (k < 0 || static_cast<std::size_t>(k) >= mask.parts())
    throw std::invalid_argument("part index out of range");
  if (weight_total(weights) <= 0.0) throw std::invalid_argument("empty foreground");
  const PartStats stats = part_stats(features.data, mask.data, weights);
  if (!stats.valid[static_cast<std::size_t>(k)]) return std::nullopt;
  PartDescriptor desc;
  desc.part_index = k;
  const double* z = stats.descriptors.data() + static_cast<std::size_t>(k) * features.channels();
  desc.vector.assign(z, z + features.channels());
  return desc;
}

double weighted_variance_loss(const Tensor& features, const Tensor& mask, const Tensor& weights,
                              double grad_coeff, Tensor* d_mask, Tensor* d_features) {
  const std::size_t d = features.dim(0), hw = features.dim(1) * features.dim(2);
  const std::size_t k = mask.dim(0);
  if (weight_total(weights) <= 0.0) throw std::invalid_argument("empty foreground");
  const PartStats stats = part_stats(features, mask, weights);

  const double* mp = mask.data();
  const double* fp = features.data();
  const double* wp = weights.data();
  const double* zp = stats.descriptors.data();

  const double value = par::block_sum(hw, [&](std::size_t u) {
    if (wp[u] == 0.0) return 0.0;
    double acc = 0.0;
    for (std::size_t part = 0; part < k; ++part) {
      if (!stats.valid[part]) continue;
      const double wm = wp[u] * mp[part * hw + u];
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = zp[part * d + c] - fp[c * hw + u];
        dist += diff * diff;
      }
      acc += wm * dist;
    }
    return acc;
  });

  if (grad_coeff != 0.0 && (d_mask != nullptr || d_features != nullptr)) {
    par::parallel_for_blocked(hw, [&](std::size_t begin, std::size_t end) {
      for (std::size_t u = begin; u < end; ++u) {
        if (wp[u] == 0.0) continue;
        for (std::size_t part = 0; part < k; ++part) {
          if (!stats.valid[part]) continue;
          double dist = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double diff = zp[part * d + c] - fp[c * hw + u];
            dist += diff * diff;
          }
          if (d_mask != nullptr) d_mask->data()[part * hw + u] += grad_coeff * wp[u] * dist;
          if (d_features != nullptr) {
            const double s = grad_coeff * 2.0 * wp[u] * mp[part * hw + u];
            for (std::size_t c = 0; c < d; ++c)
              d_features->data()[c * hw + u] += s * (fp[c * hw + u] - zp[part * d + c]);
          }
        }
      }
    });
  }
  return value;
}

double feature_loss(const FeatureMap& features, const Tensor& mask, const Tensor& weights,
                    double grad_coeff, Tensor* d_mask, Tensor* d_features) {
  return weighted_variance_loss(features.data, mask, weights, grad_coeff, d_mask, d_features);
}

double visual_loss(const Image& image, const SoftMask& mask, const ForegroundMask& fg,
                   double grad_coeff, Tensor* d_mask) {
  if (mask.height() != image.height() || mask.width() != image.width())
    throw std::invalid_argument("visual_loss runs at full image resolution");
  return weighted_variance_loss(image.data, mask.data, fg_weights(fg), grad_coeff, d_mask,
                                nullptr);
}

BatchDescriptors make_batch_descriptors(const std::vector<PartStats>& stats) {
  if (stats.empty()) throw std::invalid_argument("empty descriptor batch");
  BatchDescriptors batch;
  batch.n_images = stats.size();
  batch.n_parts = stats[0].mass.size();
  batch.dim = stats[0].descriptors.dim(1);
  batch.z = Tensor({batch.n_images, batch.n_parts, batch.dim});
  batch.valid.assign(batch.n_images * batch.n_parts, 0);
  for (std::size_t n = 0; n < batch.n_images; ++n) {
    if (stats[n].mass.size() != batch.n_parts || stats[n].descriptors.dim(1) != batch.dim)
      throw std::invalid_argument("inconsistent descriptor shapes in batch");
    std::copy(stats[n].descriptors.data(), stats[n].descriptors.data() + batch.n_parts * batch.dim,
              batch.z.data() + n * batch.n_parts * batch.dim);
    for (std::size_t part = 0; part < batch.n_parts; ++part)
      batch.valid[n * batch.n_parts + part] = stats[n].valid[part];
  }
  return batch;
}

ContrastiveResult contrastive_loss(const BatchDescriptors& batch, const TargetAssignment& targets,
                                   const ContrastiveOptions& opts, double grad_coeff, Tensor* d_z,
                                   Tensor* d_z_target_pool, const BatchDescriptors* target_pool) {
  const std::size_t n_img = batch.n_images, k = batch.n_parts, d = batch.dim;
  if (n_img < 2) throw std::invalid_argument("contrastive requires batch >= 2");
  if (opts.tau <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (targets.n_images != n_img || targets.n_parts != k)
    throw std::invalid_argument("target assignment shape mismatch");

  const NormalizedBatch nb = normalize_batch(batch, opts.normalize);
  NormalizedBatch nb_pool;
  const BatchDescriptors* pool = target_pool != nullptr ? target_pool : &batch;
  const NormalizedBatch* pool_hat = &nb;
  if (target_pool != nullptr) {
    nb_pool = normalize_batch(*target_pool, opts.normalize);
    pool_hat = &nb_pool;
  }

  const bool want = grad_coeff != 0.0 && (d_z != nullptr || d_z_target_pool != nullptr);
  Tensor d_hat, d_hat_pool;
  if (want) {
    d_hat = Tensor(batch.z.shape());
    if (target_pool != nullptr) d_hat_pool = Tensor(target_pool->z.shape());
  }

  ContrastiveResult result;
  auto dot = [d](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a[c] * b[c];
    return s;
  };

  std::vector<std::pair<std::size_t, double>> neg;  // (flat index into batch, logit)
  for (std::size_t n = 0; n < n_img; ++n) {
    for (std::size_t part = 0; part < k; ++part) {
      if (!batch.is_valid(n, part)) continue;
      const int t = targets.at(n, part);
      const bool target_ok = t != TargetAssignment::kSkipped &&
                             pool->valid[static_cast<std::size_t>(t) * k + part] != 0;
      if (!target_ok) {
        ++result.skipped;
        continue;
      }
      const double* za = nb.zhat.data() + (n * k + part) * d;
      const double* zt = pool_hat->zhat.data() + (static_cast<std::size_t>(t) * k + part) * d;
      const double s_pos = dot(za, zt) / opts.tau;

      neg.clear();
      double max_logit = s_pos;
      for (std::size_t i = 0; i < n_img; ++i) {
        if (i == n && !opts.include_same_image_negatives) continue;
        for (std::size_t j = 0; j < k; ++j) {
          if (j == part) continue;
          if (i == n && j == part) continue;
          if (!batch.is_valid(i, j)) continue;
          const double s = dot(za, nb.zhat.data() + (i * k + j) * d) / opts.tau;
          neg.emplace_back(i * k + j, s);
          max_logit = std::max(max_logit, s);
        }
      }

      double denom = std::exp(s_pos - max_logit);
      for (const auto& [idx, s] : neg) denom += std::exp(s - max_logit);
      result.value += -(s_pos - max_logit) + std::log(denom);
      ++result.anchors;

      if (want) {
        const double sig_pos = std::exp(s_pos - max_logit) / denom;
        double* ga = d_hat.data() + (n * k + part) * d;
        // positive pair
        {
          const double c = (sig_pos - 1.0) / opts.tau;
          double* gt = target_pool != nullptr
                           ? d_hat_pool.data() + (static_cast<std::size_t>(t) * k + part) * d
                           : d_hat.data() + (static_cast<std::size_t>(t) * k + part) * d;
          for (std::size_t cc = 0; cc < d; ++cc) {
            ga[cc] += c * zt[cc];
            gt[cc] += c * za[cc];
          }
        }
        for (const auto& [idx, s] : neg) {
          const double sig = std::exp(s - max_logit) / denom;
          const double c = sig / opts.tau;
          const double* zn = nb.zhat.data() + idx * d;
          double* gn = d_hat.data() + idx * d;
          for (std::size_t cc = 0; cc < d; ++cc) {
            ga[cc] += c * zn[cc];
            gn[cc] += c * za[cc];
          }
        }
      }
    }
  }

  if (want) {
    if (d_z != nullptr) denormalize_grads(batch, nb, opts.normalize, d_hat, grad_coeff, *d_z);
    if (target_pool != nullptr && d_z_target_pool != nullptr)
      denormalize_grads(*target_pool, nb_pool, opts.normalize, d_hat_pool, grad_coeff,
                        *d_z_target_pool);
  }
  return result;
}

ContrastiveResult l2_descriptor_loss(const BatchDescriptors& batch,
                                     const TargetAssignment& targets, bool normalize,
                                     double grad_coeff, Tensor* d_z, Tensor* d_z_target_pool,
                                     const BatchDescriptors* target_pool) {
  const std::size_t n_img = batch.n_images, k = batch.n_parts, d = batch.dim;
  if (n_img < 2) throw std::invalid_argument("contrastive requires batch >= 2");
  const NormalizedBatch nb = normalize_batch(batch, normalize);
  NormalizedBatch nb_pool;
  const BatchDescriptors* pool = target_pool != nullptr ? target_pool : &batch;
  const NormalizedBatch* pool_hat = &nb;
  if (target_pool != nullptr) {
    nb_pool = normalize_batch(*target_pool, normalize);
    pool_hat = &nb_pool;
  }

  const bool want = grad_coeff != 0.0 && (d_z != nullptr || d_z_target_pool != nullptr);
  Tensor d_hat, d_hat_pool;
  if (want) {
    d_hat = Tensor(batch.z.shape());
    if (target_pool != nullptr) d_hat_pool = Tensor(target_pool->z.shape());
  }

  ContrastiveResult result;
  for (std::size_t n = 0; n < n_img; ++n) {
    for (std::size_t part = 0; part < k; ++part) {
      if (!batch.is_valid(n, part)) continue;
      const int t = targets.at(n, part);
      const bool target_ok = t != TargetAssignment::kSkipped &&
                             pool->valid[static_cast<std::size_t>(t) * k + part] != 0;
      if (!target_ok) {
        ++result.skipped;
        continue;
      }
      const double* za = nb.zhat.data() + (n * k + part) * d;
      const double* zt = pool_hat->zhat.data() + (static_cast<std::size_t>(t) * k + part) * d;
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = za[c] - zt[c];
        dist += diff * diff;
      }
      result.value += dist;
      ++result.anchors;
      if (want) {
        double* ga = d_hat.data() + (n * k + part) * d;
        double* gt = target_pool != nullptr
                         ? d_hat_pool.data() + (static_cast<std::size_t>(t) * k + part) * d
                         : d_hat.data() + (static_cast<std::size_t>(t) * k + part) * d;
        for (std::size_t c = 0; c < d; ++c) {
          const double g = 2.0 * (za[c] - zt[c]);
          ga[c] += g;
          gt[c] -= g;
        }
      }
    }
  }
  if (want) {
    if (d_z != nullptr) denormalize_grads(batch, nb, normalize, d_hat, grad_coeff, *d_z);
    if (target_pool != nullptr && d_z_target_pool != nullptr)
      denormalize_grads(*target_pool, nb_pool, normalize, d_hat_pool, grad_coeff,
                        *d_z_target_pool);
  }
  return result;
}

double equivariance_loss(const SoftMask& mask_orig, const SoftMask& mask_transformed,
                         const TransformSpec& t, double grad_coeff, Tensor* d_orig,
                         Tensor* d_transformed) {
  return equivariance_core(mask_orig.data, mask_transformed.data, t, grad_coeff, d_orig,
                           d_transformed);
}

LossBreakdown total_loss(const std::vector<SampleInputs>& batch, const TargetAssignment& targets,
                         const TotalLossOptions& opts, std::vector<SampleGrads>* grads) {
  validate_loss_weights(opts.weights);
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  const std::size_t n_img = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n_img);
  const LossWeights& lw = opts.weights;

  if (grads != nullptr) {
    grads->resize(n_img);
    for (std::size_t n = 0; n < n_img; ++n) {
      auto& g = (*grads)[n];
      if (!g.d_mask.same_shape(*batch[n].mask)) g.d_mask = Tensor(batch[n].mask->shape());
      if (batch[n].mask_transformed != nullptr &&
          !g.d_mask_transformed.same_shape(*batch[n].mask_transformed))
        g.d_mask_transformed = Tensor(batch[n].mask_transformed->shape());
      if (opts.want_feature_grads && !g.d_features.same_shape(batch[n].features->data))
        g.d_features = Tensor(batch[n].features->data.shape());
    }
  }

  LossBreakdown out;
  const bool need_pool = lw.lambda_f > 0.0 || lw.lambda_c > 0.0;

  std::vector<PooledMask> pooled(need_pool ? n_img : 0);
  std::vector<Tensor> d_pooled(need_pool && grads != nullptr ? n_img : 0);
  if (need_pool) {
    for (std::size_t n = 0; n < n_img; ++n) {
      const SampleInputs& s = batch[n];
      pooled[n] = reconcile_to_grid(*s.mask, *s.fg, s.features->height(), s.features->width());
      if (grads != nullptr) d_pooled[n] = Tensor(pooled[n].mask.shape());
    }
  }

  if (lw.lambda_f > 0.0) {
    for (std::size_t n = 0; n < n_img; ++n) {
      const SampleInputs& s = batch[n];
      Tensor* dfeat = opts.want_feature_grads && grads != nullptr ? &(*grads)[n].d_features : nullptr;
      const double coeff = grads != nullptr ? lw.lambda_f * inv_n : 0.0;
      out.f += feature_loss(*s.features, pooled[n].mask, pooled[n].weights, coeff,
                            grads != nullptr ? &d_pooled[n] : nullptr, dfeat);
    }
    out.f *= inv_n;
  }

  if (lw.lambda_c > 0.0) {
    if (n_img < 2) throw std::invalid_argument("contrastive requires batch >= 2");
    std::vector<PartStats> stats(n_img);
    for (std::size_t n = 0; n < n_img; ++n)
      stats[n] = part_stats(batch[n].features->data, pooled[n].mask, pooled[n].weights);
    const BatchDescriptors descriptors = make_batch_descriptors(stats);

    // same-image-views: targets come from the transformed view's descriptors
    std::vector<PooledMask> pooled_t;
    std::vector<PartStats> stats_t;
    BatchDescriptors pool_b;
    const BatchDescriptors* target_pool = nullptr;
    if (opts.same_image_views) {
      pooled_t.resize(n_img);
      stats_t.resize(n_img);
      for (std::size_t n = 0; n < n_img; ++n) {
        const SampleInputs& s = batch[n];
        if (s.features_transformed == nullptr || s.fg_transformed == nullptr ||
            s.mask_transformed == nullptr)
          throw std::invalid_argument("same-image-views needs the transformed view inputs");
        pooled_t[n] = reconcile_to_grid(*s.mask_transformed, *s.fg_transformed,
                                        s.features_transformed->height(),
                                        s.features_transformed->width());
        stats_t[n] = part_stats(s.features_transformed->data, pooled_t[n].mask,
                                pooled_t[n].weights);
      }
      pool_b = make_batch_descriptors(stats_t);
      target_pool = &pool_b;
    }

    ContrastiveOptions copts;
    copts.tau = lw.tau;
    copts.normalize = opts.normalize_descriptors;
    copts.include_same_image_negatives = opts.include_same_image_negatives;

    Tensor d_z, d_z_pool;
    const bool want = grads != nullptr;
    if (want) {
      d_z = Tensor(descriptors.z.shape());
      if (target_pool != nullptr) d_z_pool = Tensor(pool_b.z.shape());
    }
    ContrastiveResult res;
    if (opts.use_l2_instead_of_contrastive) {
      res = l2_descriptor_loss(descriptors, targets, opts.normalize_descriptors, want ? 1.0 : 0.0,
                               want ? &d_z : nullptr, want ? &d_z_pool : nullptr, target_pool);
    } else {
      res = contrastive_loss(descriptors, targets, copts, want ? 1.0 : 0.0,
                             want ? &d_z : nullptr, want ? &d_z_pool : nullptr, target_pool);
    }
    out.c = res.value * inv_n;

    if (want) {
      // descriptor -> (pooled mask, features) backward for the anchor pool
      auto scatter = [&](const BatchDescriptors& bd, const std::vector<PartStats>& st,
                         const std::vector<PooledMask>& pm, const Tensor& dz,
                         std::vector<Tensor>* d_pm, bool into_transformed) {
        const std::size_t k = bd.n_parts, d = bd.dim;
        for (std::size_t n = 0; n < n_img; ++n) {
          const Tensor& feat = into_transformed ? batch[n].features_transformed->data
                                                : batch[n].features->data;
          const std::size_t hw = feat.dim(1) * feat.dim(2);
          const double* fp = feat.data();
          const double* wp = pm[n].weights.data();
          const double* mp = pm[n].mask.data();
          for (std::size_t part = 0; part < k; ++part) {
            if (!bd.is_valid(n, part)) continue;
            const double* g = dz.data() + (n * k + part) * d;
            double gnorm = 0.0;
            for (std::size_t c = 0; c < d; ++c) gnorm += g[c] * g[c];
            if (gnorm == 0.0) continue;
            const double inv_m = 1.0 / st[n].mass[part];
            const double* z = st[n].descriptors.data() + part * d;
            Tensor& dpm = (*d_pm)[n];
            Tensor* dfeat = opts.want_feature_grads && !into_transformed
                                ? &(*grads)[n].d_features
                                : nullptr;
            par::parallel_for_blocked(hw, [&](std::size_t begin, std::size_t end) {
              for (std::size_t u = begin; u < end; ++u) {
                if (wp[u] == 0.0) continue;
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += (fp[c * hw + u] - z[c]) * g[c];
                dpm.data()[part * hw + u] += lw.lambda_c * inv_n * wp[u] * inv_m * dot;
                if (dfeat != nullptr) {
                  const double s = lw.lambda_c * inv_n * wp[u] * mp[part * hw + u] * inv_m;
                  for (std::size_t c = 0; c < d; ++c) dfeat->data()[c * hw + u] += s * g[c];
                }
              }
            });
          }
        }
      };
      scatter(descriptors, stats, pooled, d_z, &d_pooled, false);
      if (target_pool != nullptr) {
        std::vector<Tensor> d_pooled_t(n_img);
        for (std::size_t n = 0; n < n_img; ++n) d_pooled_t[n] = Tensor(pooled_t[n].mask.shape());
        scatter(pool_b, stats_t, pooled_t, d_z_pool, &d_pooled_t, true);
        for (std::size_t n = 0; n < n_img; ++n) {
          const SampleInputs& s = batch[n];
          const std::size_t mh = s.mask_transformed->dim(1), mw = s.mask_transformed->dim(2);
          if (pooled_t[n].mask.dim(1) == mh && pooled_t[n].mask.dim(2) == mw) {
            axpy((*grads)[n].d_mask_transformed, 1.0, d_pooled_t[n]);
          } else {
            const auto plan = nn::make_area_pool(mh, mw, pooled_t[n].mask.dim(1),
                                                 pooled_t[n].mask.dim(2));
            nn::area_pool_backward(plan, d_pooled_t[n], (*grads)[n].d_mask_transformed);
          }
        }
      }
    }
  }

  // fold pooled-mask gradients (from f and c) back to full resolution
  if (need_pool && grads != nullptr) {
    for (std::size_t n = 0; n < n_img; ++n) {
      const SampleInputs& s = batch[n];
      const std::size_t mh = s.mask->dim(1), mw = s.mask->dim(2);
      if (pooled[n].mask.dim(1) == mh && pooled[n].mask.dim(2) == mw) {
        axpy((*grads)[n].d_mask, 1.0, d_pooled[n]);
      } else {
        const auto plan =
            nn::make_area_pool(mh, mw, pooled[n].mask.dim(1), pooled[n].mask.dim(2));
        nn::area_pool_backward(plan, d_pooled[n], (*grads)[n].d_mask);
      }
    }
  }

  if (lw.lambda_v > 0.0) {
    for (std::size_t n = 0; n < n_img; ++n) {
      const SampleInputs& s = batch[n];
      const double coeff = grads != nullptr ? lw.lambda_v * inv_n : 0.0;
      out.v += weighted_variance_loss(*s.image, *s.mask, fg_weights(*s.fg), coeff,
                                      grads != nullptr ? &(*grads)[n].d_mask : nullptr, nullptr);
    }
    out.v *= inv_n;
  }

  if (lw.lambda_e > 0.0) {
    for (std::size_t n = 0; n < n_img; ++n) {
      const SampleInputs& s = batch[n];
      if (s.transform == nullptr || s.mask_transformed == nullptr)
        throw std::invalid_argument("equivariance term needs the transformed view");
      const double coeff = grads != nullptr ? lw.lambda_e * inv_n : 0.0;
      out.e += equivariance_core(*s.mask, *s.mask_transformed, *s.transform, coeff,
                                 grads != nullptr ? &(*grads)[n].d_mask : nullptr,
                                 grads != nullptr ? &(*grads)[n].d_mask_transformed : nullptr);
    }
    out.e *= inv_n;
  }

  out.total = lw.lambda_f * out.f + lw.lambda_c * out.c + lw.lambda_v * out.v + lw.lambda_e * out.e;
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss");
  return out;
}

}  // namespace partscope
