#include <atomic>
#include <cmath>
#include <limits>

#include "hic/kernels.hpp"

// OpenMP kernels. Parallel loops run over disjoint output (or, for input
// gradients, disjoint (n, channel) planes); inner accumulation order matches
// the reference kernels exactly, so results are bit-identical to ref:: for
// any thread count.

namespace hic::kernels {

namespace par {

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const double* bias, int stride, int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const Shape ys = conv2d_out_shape(xs, ws, stride, pad);
  Tensor y(ys);
  const int k = ws.h;
  const int64_t planes = static_cast<int64_t>(ys.n) * ys.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / ys.c);
    const int co = static_cast<int>(p % ys.c);
    const double b = bias ? bias[co] : 0.0;
    const double* wp = w.data() + static_cast<int64_t>(co) * ws.c * k * k;
    for (int oy = 0; oy < ys.h; ++oy)
      for (int ox = 0; ox < ys.w; ++ox) {
        double acc = b;
        for (int ci = 0; ci < xs.c; ++ci) {
          const double* xp = x.data() + (static_cast<int64_t>(n) * xs.c + ci) * xs.h * xs.w;
          const double* wc = wp + static_cast<int64_t>(ci) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= xs.h) continue;
            const double* xrow = xp + static_cast<int64_t>(iy) * xs.w;
            const double* wrow = wc + ky * k;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= xs.w) continue;
              acc += xrow[ix] * wrow[kx];
            }
          }
        }
        y.at(n, co, oy, ox) = acc;
      }
  }
  return y;
}

void conv2d_bwd_input(const Tensor& dy, const Tensor& w, int stride, int pad, Tensor& dx) {
  const Shape ys = dy.shape(), ws = w.shape(), xs = dx.shape();
  const int k = ws.h;
  const int64_t planes = static_cast<int64_t>(ys.n) * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / xs.c);
    const int ci = static_cast<int>(p % xs.c);
    for (int co = 0; co < ys.c; ++co)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          const double g = dy.at(n, co, oy, ox);
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= xs.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= xs.w) continue;
              dx.at(n, ci, iy, ix) += g * w.at(co, ci, ky, kx);
            }
          }
        }
  }
}

void conv2d_bwd_weight(const Tensor& dy, const Tensor& x, int stride, int pad, Tensor& dw) {
  const Shape ys = dy.shape(), xs = x.shape(), ws = dw.shape();
  const int k = ws.h;
  const int64_t cells = static_cast<int64_t>(ws.n) * ws.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < cells; ++p) {
    const int co = static_cast<int>(p / ws.c);
    const int ci = static_cast<int>(p % ws.c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double acc = 0.0;
        for (int n = 0; n < ys.n; ++n)
          for (int oy = 0; oy < ys.h; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= xs.h) continue;
            for (int ox = 0; ox < ys.w; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= xs.w) continue;
              acc += dy.at(n, co, oy, ox) * x.at(n, ci, iy, ix);
            }
          }
        dw.at(co, ci, ky, kx) += acc;
      }
  }
}

void conv2d_bwd_bias(const Tensor& dy, double* db) {
  const Shape ys = dy.shape();
#pragma omp parallel for schedule(static)
  for (int co = 0; co < ys.c; ++co) {
    double acc = 0.0;
    for (int n = 0; n < ys.n; ++n)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) acc += dy.at(n, co, oy, ox);
    db[co] += acc;
  }
}

MaxPoolResult maxpool_fwd(const Tensor& x, int k, int stride, int pad) {
  const Shape xs = x.shape();
  check_shape(k >= 1 && stride >= 1 && pad >= 0, "maxpool: bad k/stride/pad");
  check_shape(k <= xs.h + 2 * pad && k <= xs.w + 2 * pad,
              "maxpool: kernel " + std::to_string(k) + " larger than padded input " + xs.str());
  const int oh = (xs.h + 2 * pad - k) / stride + 1;
  const int ow = (xs.w + 2 * pad - k) / stride + 1;
  MaxPoolResult r{Tensor(Shape{xs.n, xs.c, oh, ow}), {}};
  r.argmax.assign(static_cast<size_t>(r.out.numel()), -1);
  const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / xs.c);
    const int c = static_cast<int>(p % xs.c);
    int64_t oi = p * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++oi) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= xs.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= xs.w) continue;
            const double v = x.at(n, c, iy, ix);
            if (v > best) {
              best = v;
              best_idx = x.index(n, c, iy, ix);
            }
          }
        }
        r.out.data()[oi] = best;
        r.argmax[static_cast<size_t>(oi)] = best_idx;
      }
  }
  return r;
}

void maxpool_bwd(const Tensor& dy, const std::vector<int64_t>& argmax, Tensor& dx) {
  // scatter with possible collisions across outputs; keep it serial
  ref::maxpool_bwd(dy, argmax, dx);
}

Tensor involution_fwd(const Tensor& x, const Tensor& ker, int k, int groups) {
  const Shape xs = x.shape();
  check_shape(xs.c % groups == 0,
              "involution: groups G=" + std::to_string(groups) + " must divide C=" + std::to_string(xs.c));
  check_shape(ker.shape().c == groups * k * k && ker.shape().h == xs.h && ker.shape().w == xs.w,
              "involution: kernel map shape " + ker.shape().str() + " does not match input " + xs.str());
  const int half = k / 2;
  Tensor y(xs);
  const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / xs.c);
    const int c = static_cast<int>(p % xs.c);
    const int g = (static_cast<int64_t>(c + 1) * groups + xs.c - 1) / xs.c - 1;
    for (int i = 0; i < xs.h; ++i)
      for (int j = 0; j < xs.w; ++j) {
        double acc = 0.0;
        for (int u = -half; u <= half; ++u) {
          const int iy = i + u;
          if (iy < 0 || iy >= xs.h) continue;
          for (int v = -half; v <= half; ++v) {
            const int ix = j + v;
            if (ix < 0 || ix >= xs.w) continue;
            const int kc = (g * k + (u + half)) * k + (v + half);
            acc += ker.at(n, kc, i, j) * x.at(n, c, iy, ix);
          }
        }
        y.at(n, c, i, j) = acc;
      }
  }
  return y;
}

void involution_bwd_input(const Tensor& dy, const Tensor& ker, int k, int groups, Tensor& dx) {
  const Shape xs = dx.shape();
  const int half = k / 2;
  const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / xs.c);
    const int c = static_cast<int>(p % xs.c);
    const int g = (static_cast<int64_t>(c + 1) * groups + xs.c - 1) / xs.c - 1;
    for (int i = 0; i < xs.h; ++i)
      for (int j = 0; j < xs.w; ++j) {
        const double gy = dy.at(n, c, i, j);
        for (int u = -half; u <= half; ++u) {
          const int iy = i + u;
          if (iy < 0 || iy >= xs.h) continue;
          for (int v = -half; v <= half; ++v) {
            const int ix = j + v;
            if (ix < 0 || ix >= xs.w) continue;
            const int kc = (g * k + (u + half)) * k + (v + half);
            dx.at(n, c, iy, ix) += gy * ker.at(n, kc, i, j);
          }
        }
      }
  }
}

void involution_bwd_kernel(const Tensor& dy, const Tensor& x, int k, int groups, Tensor& dker) {
  const Shape xs = x.shape();
  const int half = k / 2;
  const int per_group = xs.c / groups;
  const int64_t planes = static_cast<int64_t>(xs.n) * groups;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / groups);
    const int g = static_cast<int>(p % groups);
    for (int u = -half; u <= half; ++u)
      for (int v = -half; v <= half; ++v) {
        const int kc = (g * k + (u + half)) * k + (v + half);
        for (int i = 0; i < xs.h; ++i) {
          const int iy = i + u;
          if (iy < 0 || iy >= xs.h) continue;
          for (int j = 0; j < xs.w; ++j) {
            const int ix = j + v;
            if (ix < 0 || ix >= xs.w) continue;
            double acc = 0.0;
            for (int c = g * per_group; c < (g + 1) * per_group; ++c)
              acc += dy.at(n, c, i, j) * x.at(n, c, iy, ix);
            dker.at(n, kc, i, j) += acc;
          }
        }
      }
  }
}

Tensor silu_fwd(const Tensor& x) {
  Tensor y(x.shape());
  const double* xv = x.data();
  double* yv = y.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) yv[i] = xv[i] * sigmoid_scalar(xv[i]);
  return y;
}

void silu_bwd(const Tensor& dy, const Tensor& x, Tensor& dx) {
  const double* g = dy.data();
  const double* xv = x.data();
  double* d = dx.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double s = sigmoid_scalar(xv[i]);
    d[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
  }
}

Tensor sigmoid_fwd(const Tensor& x) {
  Tensor y(x.shape());
  const double* xv = x.data();
  double* yv = y.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) yv[i] = sigmoid_scalar(xv[i]);
  return y;
}

void sigmoid_bwd(const Tensor& dy, const Tensor& y, Tensor& dx) {
  const double* g = dy.data();
  const double* yv = y.data();
  double* d = dx.data();
  const int64_t n = y.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) d[i] += g[i] * yv[i] * (1.0 - yv[i]);
}

Tensor upsample2x_fwd(const Tensor& x) {
  const Shape xs = x.shape();
  Tensor y(Shape{xs.n, xs.c, xs.h * 2, xs.w * 2});
  const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / xs.c);
    const int c = static_cast<int>(p % xs.c);
    for (int i = 0; i < xs.h; ++i)
      for (int j = 0; j < xs.w; ++j) {
        const double v = x.at(n, c, i, j);
        y.at(n, c, 2 * i, 2 * j) = v;
        y.at(n, c, 2 * i, 2 * j + 1) = v;
        y.at(n, c, 2 * i + 1, 2 * j) = v;
        y.at(n, c, 2 * i + 1, 2 * j + 1) = v;
      }
  }
  return y;
}

void upsample2x_bwd(const Tensor& dy, Tensor& dx) {
  const Shape xs = dx.shape();
  const int64_t planes = static_cast<int64_t>(xs.n) * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const int n = static_cast<int>(p / xs.c);
    const int c = static_cast<int>(p % xs.c);
    for (int i = 0; i < xs.h; ++i)
      for (int j = 0; j < xs.w; ++j)
        dx.at(n, c, i, j) += dy.at(n, c, 2 * i, 2 * j) + dy.at(n, c, 2 * i, 2 * j + 1) +
                             dy.at(n, c, 2 * i + 1, 2 * j) + dy.at(n, c, 2 * i + 1, 2 * j + 1);
  }
}

Moments channel_moments(const Tensor& x) {
  const Shape xs = x.shape();
  Moments m;
  m.mean.assign(xs.c, 0.0);
  m.var.assign(xs.c, 0.0);
  const int64_t cnt = static_cast<int64_t>(xs.n) * xs.h * xs.w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < xs.c; ++c) {
    double s = 0.0;
    for (int n = 0; n < xs.n; ++n)
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) s += x.at(n, c, i, j);
    const double mean = s / static_cast<double>(cnt);
    double sq = 0.0;
    for (int n = 0; n < xs.n; ++n)
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) {
          const double d = x.at(n, c, i, j) - mean;
          sq += d * d;
        }
    m.mean[c] = mean;
    m.var[c] = sq / static_cast<double>(cnt);
  }
  return m;
}

}  // namespace par

namespace {
std::atomic<bool> g_parallel{true};
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

#define HIC_DISPATCH(call) return parallel_enabled() ? par::call : ref::call

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const double* bias, int stride, int pad) {
  HIC_DISPATCH(conv2d_fwd(x, w, bias, stride, pad));
}
void conv2d_bwd_input(const Tensor& dy, const Tensor& w, int stride, int pad, Tensor& dx) {
  HIC_DISPATCH(conv2d_bwd_input(dy, w, stride, pad, dx));
}
void conv2d_bwd_weight(const Tensor& dy, const Tensor& x, int stride, int pad, Tensor& dw) {
  HIC_DISPATCH(conv2d_bwd_weight(dy, x, stride, pad, dw));
}
void conv2d_bwd_bias(const Tensor& dy, double* db) { HIC_DISPATCH(conv2d_bwd_bias(dy, db)); }
MaxPoolResult maxpool_fwd(const Tensor& x, int k, int stride, int pad) {
  HIC_DISPATCH(maxpool_fwd(x, k, stride, pad));
}
void maxpool_bwd(const Tensor& dy, const std::vector<int64_t>& argmax, Tensor& dx) {
  HIC_DISPATCH(maxpool_bwd(dy, argmax, dx));
}
Tensor involution_fwd(const Tensor& x, const Tensor& ker, int k, int groups) {
  HIC_DISPATCH(involution_fwd(x, ker, k, groups));
}
void involution_bwd_input(const Tensor& dy, const Tensor& ker, int k, int groups, Tensor& dx) {
  HIC_DISPATCH(involution_bwd_input(dy, ker, k, groups, dx));
}
void involution_bwd_kernel(const Tensor& dy, const Tensor& x, int k, int groups, Tensor& dker) {
  HIC_DISPATCH(involution_bwd_kernel(dy, x, k, groups, dker));
}
Tensor silu_fwd(const Tensor& x) { HIC_DISPATCH(silu_fwd(x)); }
void silu_bwd(const Tensor& dy, const Tensor& x, Tensor& dx) { HIC_DISPATCH(silu_bwd(dy, x, dx)); }
Tensor sigmoid_fwd(const Tensor& x) { HIC_DISPATCH(sigmoid_fwd(x)); }
void sigmoid_bwd(const Tensor& dy, const Tensor& y, Tensor& dx) {
  HIC_DISPATCH(sigmoid_bwd(dy, y, dx));
}
Tensor upsample2x_fwd(const Tensor& x) { HIC_DISPATCH(upsample2x_fwd(x)); }
void upsample2x_bwd(const Tensor& dy, Tensor& dx) { HIC_DISPATCH(upsample2x_bwd(dy, dx)); }
Moments channel_moments(const Tensor& x) { HIC_DISPATCH(channel_moments(x)); }

#undef HIC_DISPATCH

}  // namespace hic::kernels
