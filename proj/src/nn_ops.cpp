#include "partscope/nn_ops.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#include "partscope/parallel.hpp"

namespace partscope::nn {

namespace {

inline std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= static_cast<long long>(n)) return static_cast<std::size_t>(2 * n - 2 - i);
  return static_cast<std::size_t>(i);
}

// (C, h, w) -> (C, h+2, w+2) with one ring of reflect padding
std::vector<double> reflect_pad1(const Tensor& in) {
  const std::size_t ch = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t ph = h + 2, pw = w + 2;
  std::vector<double> pad(ch * ph * pw);
  const double* src = in.data();
  par::parallel_for(ch * ph, [&](std::size_t t) {
    const std::size_t c = t / ph;
    const long long yp = static_cast<long long>(t % ph) - 1;
    const std::size_t ys = reflect_index(yp, h);
    const double* row = src + (c * h + ys) * w;
    double* dst = pad.data() + t * pw;
    dst[0] = row[reflect_index(-1, w)];
    for (std::size_t x = 0; x < w; ++x) dst[x + 1] = row[x];
    dst[pw - 1] = row[reflect_index(static_cast<long long>(w), w)];
  });
  return pad;
}

inline std::size_t conv_out(std::size_t n, int stride) {
  return (n + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

}  // namespace

void conv3x3_forward(const Tensor& in, const Tensor& weights, const Tensor& bias, int stride,
                     Tensor& out) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t co = weights.dim(0);
  assert(weights.dim(1) == ci && weights.dim(2) == 3 && weights.dim(3) == 3);
  assert(bias.size() == co);
  const std::size_t oh = conv_out(h, stride), ow = conv_out(w, stride);
  if (out.shape() != std::vector<std::size_t>{co, oh, ow}) out = Tensor({co, oh, ow});

  const std::vector<double> pad = reflect_pad1(in);
  const std::size_t pw = w + 2, ph = h + 2;
  const double* wp = weights.data();
  const double* bp = bias.data();
  double* op = out.data();
  const std::size_t s = static_cast<std::size_t>(stride);

  par::parallel_for(co * oh, [&](std::size_t t) {
    const std::size_t c_out = t / oh;
    const std::size_t yo = t % oh;
    double* row = op + (c_out * oh + yo) * ow;
    for (std::size_t x = 0; x < ow; ++x) row[x] = bp[c_out];
    for (std::size_t c_in = 0; c_in < ci; ++c_in) {
      const double* wk = wp + (c_out * ci + c_in) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const double* prow = pad.data() + (c_in * ph + yo * s + ky) * pw;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = wk[ky * 3 + kx];
          if (s == 1) {
            const double* p = prow + kx;
            for (std::size_t x = 0; x < ow; ++x) row[x] += wv * p[x];
          } else {
            const double* p = prow + kx;
            for (std::size_t x = 0; x < ow; ++x) row[x] += wv * p[x * s];
          }
        }
      }
    }
  });
}

void conv3x3_backward(const Tensor& in, const Tensor& weights, int stride, const Tensor& d_out,
                      Tensor* d_in, Tensor* d_weights, Tensor* d_bias) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t co = weights.dim(0);
  const std::size_t oh = d_out.dim(1), ow = d_out.dim(2);
  assert(d_out.dim(0) == co);
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t ph = h + 2, pw = w + 2;
  const double* gp = d_out.data();

  if (d_bias != nullptr) {
    assert(d_bias->size() == co);
    par::parallel_for(co, [&](std::size_t c) {
      double acc = 0.0;
      const double* g = gp + c * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) acc += g[i];
      d_bias->data()[c] += acc;
    });
  }

  if (d_weights != nullptr) {
    assert(d_weights->same_shape(weights));
    const std::vector<double> pad = reflect_pad1(in);
    par::parallel_for(co * ci, [&](std::size_t t) {
      const std::size_t c_out = t / ci;
      const std::size_t c_in = t % ci;
      double* dw = d_weights->data() + t * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          double acc = 0.0;
          for (std::size_t yo = 0; yo < oh; ++yo) {
            const double* g = gp + (c_out * oh + yo) * ow;
            const double* p = pad.data() + (c_in * ph + yo * s + ky) * pw + kx;
            if (s == 1) {
              for (std::size_t x = 0; x < ow; ++x) acc += g[x] * p[x];
            } else {
              for (std::size_t x = 0; x < ow; ++x) acc += g[x] * p[x * s];
            }
          }
          dw[ky * 3 + kx] += acc;
        }
      }
    });
  }

  if (d_in != nullptr) {
    assert(d_in->same_shape(in));
    const double* wp = weights.data();
    // gradient w.r.t. the padded buffer, rows written independently
    std::vector<double> dpad(ci * ph * pw, 0.0);
    par::parallel_for(ci * ph, [&](std::size_t t) {
      const std::size_t c_in = t / ph;
      const std::size_t yp = t % ph;
      double* drow = dpad.data() + t * pw;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        if (yp < ky) continue;
        const std::size_t ynum = yp - ky;
        if (ynum % s != 0) continue;
        const std::size_t yo = ynum / s;
        if (yo >= oh) continue;
        for (std::size_t c_out = 0; c_out < co; ++c_out) {
          const double* wk = wp + (c_out * ci + c_in) * 9 + ky * 3;
          const double* g = gp + (c_out * oh + yo) * ow;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double wv = wk[kx];
            double* d = drow + kx;
            if (s == 1) {
              for (std::size_t x = 0; x < ow; ++x) d[x] += wv * g[x];
            } else {
              for (std::size_t x = 0; x < ow; ++x) d[x * s] += wv * g[x];
            }
          }
        }
      }
    });
    // fold the pad ring back through the reflection
    const std::size_t rt = h == 1 ? 0 : 1, rb = h == 1 ? 0 : h - 2;
    const std::size_t cl = w == 1 ? 0 : 1, cr = w == 1 ? 0 : w - 2;
    par::parallel_for(ci * h, [&](std::size_t t) {
      const std::size_t c = t / h;
      const std::size_t y = t % h;
      const double* drow = dpad.data() + (c * ph + y + 1) * pw;
      double* dst = d_in->data() + t * w;
      for (std::size_t x = 0; x < w; ++x) dst[x] += drow[x + 1];
      dst[cl] += drow[0];
      dst[cr] += drow[pw - 1];
    });
    for (std::size_t c = 0; c < ci; ++c) {
      const double* top = dpad.data() + c * ph * pw;
      const double* bot = dpad.data() + (c * ph + ph - 1) * pw;
      double* drt = d_in->data() + (c * h + rt) * w;
      double* drb = d_in->data() + (c * h + rb) * w;
      for (std::size_t x = 0; x < w; ++x) drt[x] += top[x + 1];
      for (std::size_t x = 0; x < w; ++x) drb[x] += bot[x + 1];
      drt[cl] += top[0];
      drt[cr] += top[pw - 1];
      drb[cl] += bot[0];
      drb[cr] += bot[pw - 1];
    }
  }
}

void conv1x1_forward(const Tensor& in, const Tensor& weights, const Tensor& bias, Tensor& out) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t co = weights.dim(0);
  assert(weights.dim(1) == ci);
  if (out.shape() != std::vector<std::size_t>{co, h, w}) out = Tensor({co, h, w});
  const std::size_t hw = h * w;
  const double* ip = in.data();
  const double* wp = weights.data();
  double* op = out.data();
  par::parallel_for(co * h, [&](std::size_t t) {
    const std::size_t c_out = t / h;
    const std::size_t y = t % h;
    double* row = op + c_out * hw + y * w;
    for (std::size_t x = 0; x < w; ++x) row[x] = bias.data()[c_out];
    for (std::size_t c_in = 0; c_in < ci; ++c_in) {
      const double wv = wp[c_out * ci + c_in];
      const double* p = ip + c_in * hw + y * w;
      for (std::size_t x = 0; x < w; ++x) row[x] += wv * p[x];
    }
  });
}

void conv1x1_backward(const Tensor& in, const Tensor& weights, const Tensor& d_out, Tensor* d_in,
                      Tensor* d_weights, Tensor* d_bias) {
  const std::size_t ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t co = weights.dim(0);
  const std::size_t hw = h * w;
  const double* gp = d_out.data();
  const double* ip = in.data();

  if (d_bias != nullptr) {
    par::parallel_for(co, [&](std::size_t c) {
      double acc = 0.0;
      for (std::size_t u = 0; u < hw; ++u) acc += gp[c * hw + u];
      d_bias->data()[c] += acc;
    });
  }
  if (d_weights != nullptr) {
    par::parallel_for(co * ci, [&](std::size_t t) {
      const std::size_t c_out = t / ci;
      const std::size_t c_in = t % ci;
      double acc = 0.0;
      const double* g = gp + c_out * hw;
      const double* p = ip + c_in * hw;
      for (std::size_t u = 0; u < hw; ++u) acc += g[u] * p[u];
      d_weights->data()[t] += acc;
    });
  }
  if (d_in != nullptr) {
    const double* wp = weights.data();
    par::parallel_for(ci * h, [&](std::size_t t) {
      const std::size_t c_in = t / h;
      const std::size_t y = t % h;
      double* dst = d_in->data() + c_in * hw + y * w;
      for (std::size_t c_out = 0; c_out < co; ++c_out) {
        const double wv = wp[c_out * ci + c_in];
        const double* g = gp + c_out * hw + y * w;
        for (std::size_t x = 0; x < w; ++x) dst[x] += wv * g[x];
      }
    });
  }
}

AreaPoolPlan make_area_pool(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                            std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || out_h > in_h || out_w > in_w)
    throw std::invalid_argument("area pool target must be nonzero and not exceed the input");
  AreaPoolPlan plan;
  plan.in_h = in_h;
  plan.in_w = in_w;
  plan.out_h = out_h;
  plan.out_w = out_w;
  plan.box_h = static_cast<double>(in_h) / static_cast<double>(out_h);
  plan.box_w = static_cast<double>(in_w) / static_cast<double>(out_w);
  auto build = [](std::size_t n_in, std::size_t n_out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> segs(n_out);
    for (std::size_t j = 0; j < n_out; ++j) {
      const double start = static_cast<double>(j * n_in) / static_cast<double>(n_out);
      const double end = static_cast<double>((j + 1) * n_in) / static_cast<double>(n_out);
      for (std::size_t i = static_cast<std::size_t>(start); i < n_in; ++i) {
        const double lo = std::max(start, static_cast<double>(i));
        const double hi = std::min(end, static_cast<double>(i + 1));
        if (hi <= lo) break;
        segs[j].emplace_back(i, hi - lo);
      }
    }
    return segs;
  };
  plan.rows = build(in_h, out_h);
  plan.cols = build(in_w, out_w);
  return plan;
}

void area_pool_forward(const AreaPoolPlan& plan, const Tensor& in, Tensor& out) {
  const std::size_t ch = in.dim(0);
  assert(in.dim(1) == plan.in_h && in.dim(2) == plan.in_w);
  if (out.shape() != std::vector<std::size_t>{ch, plan.out_h, plan.out_w})
    out = Tensor({ch, plan.out_h, plan.out_w});
  const double norm = plan.box_h * plan.box_w;
  const double* ip = in.data();
  double* op = out.data();
  par::parallel_for(ch * plan.out_h, [&](std::size_t t) {
    const std::size_t c = t / plan.out_h;
    const std::size_t j = t % plan.out_h;
    double* row = op + t * plan.out_w;
    for (std::size_t jx = 0; jx < plan.out_w; ++jx) {
      double acc = 0.0;
      for (const auto& [yi, wy] : plan.rows[j]) {
        const double* irow = ip + (c * plan.in_h + yi) * plan.in_w;
        double racc = 0.0;
        for (const auto& [xi, wx] : plan.cols[jx]) racc += wx * irow[xi];
        acc += wy * racc;
      }
      row[jx] = acc / norm;
    }
  });
}

void area_pool_backward(const AreaPoolPlan& plan, const Tensor& d_out, Tensor& d_in) {
  const std::size_t ch = d_out.dim(0);
  assert(d_out.dim(1) == plan.out_h && d_out.dim(2) == plan.out_w);
  assert(d_in.dim(0) == ch && d_in.dim(1) == plan.in_h && d_in.dim(2) == plan.in_w);
  // transpose maps: input index -> (output cell, weight)
  auto reverse = [](const std::vector<std::vector<std::pair<std::size_t, double>>>& segs,
                    std::size_t n_in) {
    std::vector<std::vector<std::pair<std::size_t, double>>> rev(n_in);
    for (std::size_t j = 0; j < segs.size(); ++j)
      for (const auto& [i, wgt] : segs[j]) rev[i].emplace_back(j, wgt);
    return rev;
  };
  const auto rrows = reverse(plan.rows, plan.in_h);
  const auto rcols = reverse(plan.cols, plan.in_w);
  const double norm = plan.box_h * plan.box_w;
  const double* gp = d_out.data();
  par::parallel_for(ch * plan.in_h, [&](std::size_t t) {
    const std::size_t c = t / plan.in_h;
    const std::size_t yi = t % plan.in_h;
    double* dst = d_in.data() + t * plan.in_w;
    for (std::size_t xi = 0; xi < plan.in_w; ++xi) {
      double acc = 0.0;
      for (const auto& [j, wy] : rrows[yi]) {
        const double* grow = gp + (c * plan.out_h + j) * plan.out_w;
        for (const auto& [jx, wx] : rcols[xi]) acc += wy * wx * grow[jx];
      }
      dst[xi] += acc / norm;
    }
  });
}

void upsample_nearest_forward(const Tensor& in, std::size_t oh, std::size_t ow, Tensor& out) {
  const std::size_t ch = in.dim(0), ih = in.dim(1), iw = in.dim(2);
  if (out.shape() != std::vector<std::size_t>{ch, oh, ow}) out = Tensor({ch, oh, ow});
  const double* ip = in.data();
  double* op = out.data();
  par::parallel_for(ch * oh, [&](std::size_t t) {
    const std::size_t c = t / oh;
    const std::size_t yo = t % oh;
    const std::size_t ys = yo * ih / oh;
    const double* src = ip + (c * ih + ys) * iw;
    double* dst = op + t * ow;
    for (std::size_t xo = 0; xo < ow; ++xo) dst[xo] = src[xo * iw / ow];
  });
}

void upsample_nearest_backward(const Tensor& d_out, std::size_t ih, std::size_t iw, Tensor& d_in) {
  const std::size_t ch = d_out.dim(0), oh = d_out.dim(1), ow = d_out.dim(2);
  assert(d_in.dim(0) == ch && d_in.dim(1) == ih && d_in.dim(2) == iw);
  std::vector<std::vector<std::size_t>> ys_of(ih), xs_of(iw);
  for (std::size_t yo = 0; yo < oh; ++yo) ys_of[yo * ih / oh].push_back(yo);
  for (std::size_t xo = 0; xo < ow; ++xo) xs_of[xo * iw / ow].push_back(xo);
  const double* gp = d_out.data();
  par::parallel_for(ch * ih, [&](std::size_t t) {
    const std::size_t c = t / ih;
    const std::size_t ys = t % ih;
    double* dst = d_in.data() + t * iw;
    for (std::size_t xs = 0; xs < iw; ++xs) {
      double acc = 0.0;
      for (std::size_t yo : ys_of[ys]) {
        const double* grow = gp + (c * oh + yo) * ow;
        for (std::size_t xo : xs_of[xs]) acc += grow[xo];
      }
      dst[xs] += acc;
    }
  });
}

void softmax_channels(const Tensor& logits, Tensor& probs) {
  const std::size_t k = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (!probs.same_shape(logits)) probs = Tensor(logits.shape());
  const double* lp = logits.data();
  double* pp = probs.data();
  par::parallel_for_blocked(hw, [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      double mx = lp[u];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, lp[c * hw + u]);
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double e = std::exp(lp[c * hw + u] - mx);
        pp[c * hw + u] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < k; ++c) pp[c * hw + u] /= sum;
    }
  });
}

void softmax_channels_backward(const Tensor& probs, const Tensor& d_probs, Tensor& d_logits) {
  const std::size_t k = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  assert(d_logits.same_shape(probs) && d_probs.same_shape(probs));
  const double* pp = probs.data();
  const double* gp = d_probs.data();
  double* dp = d_logits.data();
  par::parallel_for_blocked(hw, [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += gp[c * hw + u] * pp[c * hw + u];
      for (std::size_t c = 0; c < k; ++c)
        dp[c * hw + u] += pp[c * hw + u] * (gp[c * hw + u] - dot);
    }
  });
}

void tanh_forward(Tensor& x) {
  double* p = x.data();
  par::parallel_for_blocked(x.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) p[i] = std::tanh(p[i]);
  });
}

void tanh_backward(const Tensor& y, const Tensor& d_y, Tensor& d_x) {
  assert(y.same_shape(d_y) && y.same_shape(d_x));
  const double* yp = y.data();
  const double* gp = d_y.data();
  double* dp = d_x.data();
  par::parallel_for_blocked(y.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) dp[i] += gp[i] * (1.0 - yp[i] * yp[i]);
  });
}

void concat_channels(const Tensor& a, const Tensor& b, Tensor& out) {
  assert(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2));
  const std::size_t ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
  if (out.shape() != std::vector<std::size_t>{ca + cb, h, w}) out = Tensor({ca + cb, h, w});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
}

void split_channels_backward(const Tensor& d_out, Tensor& d_a, Tensor& d_b) {
  const std::size_t na = d_a.size(), nb = d_b.size();
  assert(d_out.size() == na + nb);
  const double* g = d_out.data();
  double* ap = d_a.data();
  double* bp = d_b.data();
  for (std::size_t i = 0; i < na; ++i) ap[i] += g[i];
  for (std::size_t i = 0; i < nb; ++i) bp[i] += g[na + i];
}

}  // namespace partscope::nn
