#include <cmath>
#include <limits>

#include "hic/kernels.hpp"

// Naive reference kernels. These are the ground truth for the parallel
// implementations and for the gradient tests; keep them as plain nested
// loops with no restructuring.

namespace hic::kernels {

Shape conv2d_out_shape(const Shape& x, const Shape& w, int stride, int pad) {
  check_shape(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
  check_shape(pad >= 0, "conv2d: pad must be >= 0, got " + std::to_string(pad));
  check_shape(w.h == w.w, "conv2d: kernel must be square, got " + w.str());
  check_shape(x.c == w.c, "conv2d: input channels C=" + std::to_string(x.c) +
                              " do not match weight Cin=" + std::to_string(w.c));
  const int oh = (x.h + 2 * pad - w.h) / stride + 1;
  const int ow = (x.w + 2 * pad - w.w) / stride + 1;
  check_shape(oh >= 1 && ow >= 1, "conv2d: kernel " + std::to_string(w.h) +
                                      " larger than padded input " + x.str());
  return Shape{x.n, w.n, oh, ow};
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace ref {

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const double* bias, int stride, int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const Shape ys = conv2d_out_shape(xs, ws, stride, pad);
  Tensor y(ys);
  const int k = ws.h;
  for (int n = 0; n < ys.n; ++n)
    for (int co = 0; co < ys.c; ++co)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= xs.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
            }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

void conv2d_bwd_input(const Tensor& dy, const Tensor& w, int stride, int pad, Tensor& dx) {
  const Shape ys = dy.shape(), ws = w.shape(), xs = dx.shape();
  const int k = ws.h;
  for (int n = 0; n < ys.n; ++n)
    for (int ci = 0; ci < xs.c; ++ci)
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

void conv2d_bwd_weight(const Tensor& dy, const Tensor& x, int stride, int pad, Tensor& dw) {
  const Shape ys = dy.shape(), xs = x.shape(), ws = dw.shape();
  const int k = ws.h;
  for (int co = 0; co < ws.n; ++co)
    for (int ci = 0; ci < ws.c; ++ci)
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

void conv2d_bwd_bias(const Tensor& dy, double* db) {
  const Shape ys = dy.shape();
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
  int64_t oi = 0;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          // padding counts as -inf: ties resolve to the lowest linear index
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
  return r;
}

void maxpool_bwd(const Tensor& dy, const std::vector<int64_t>& argmax, Tensor& dx) {
  const double* g = dy.data();
  double* dst = dx.data();
  for (size_t i = 0; i < argmax.size(); ++i)
    if (argmax[i] >= 0) dst[argmax[i]] += g[i];
}

Tensor involution_fwd(const Tensor& x, const Tensor& ker, int k, int groups) {
  const Shape xs = x.shape();
  check_shape(xs.c % groups == 0,
              "involution: groups G=" + std::to_string(groups) + " must divide C=" + std::to_string(xs.c));
  check_shape(ker.shape().c == groups * k * k && ker.shape().h == xs.h && ker.shape().w == xs.w,
              "involution: kernel map shape " + ker.shape().str() + " does not match input " + xs.str());
  const int half = k / 2;
  Tensor y(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      // 1-indexed group assignment ceil(c1 * G / C), stored 0-indexed
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
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
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
  for (int n = 0; n < xs.n; ++n)
    for (int g = 0; g < groups; ++g)
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

Tensor silu_fwd(const Tensor& x) {
  Tensor y(x.shape());
  const double* xv = x.data();
  double* yv = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yv[i] = xv[i] * sigmoid_scalar(xv[i]);
  return y;
}

void silu_bwd(const Tensor& dy, const Tensor& x, Tensor& dx) {
  const double* g = dy.data();
  const double* xv = x.data();
  double* d = dx.data();
  const int64_t n = x.numel();
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
  for (int64_t i = 0; i < n; ++i) yv[i] = sigmoid_scalar(xv[i]);
  return y;
}

void sigmoid_bwd(const Tensor& dy, const Tensor& y, Tensor& dx) {
  const double* g = dy.data();
  const double* yv = y.data();
  double* d = dx.data();
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += g[i] * yv[i] * (1.0 - yv[i]);
}

Tensor upsample2x_fwd(const Tensor& x) {
  const Shape xs = x.shape();
  Tensor y(Shape{xs.n, xs.c, xs.h * 2, xs.w * 2});
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) {
          const double v = x.at(n, c, i, j);
          y.at(n, c, 2 * i, 2 * j) = v;
          y.at(n, c, 2 * i, 2 * j + 1) = v;
          y.at(n, c, 2 * i + 1, 2 * j) = v;
          y.at(n, c, 2 * i + 1, 2 * j + 1) = v;
        }
  return y;
}

void upsample2x_bwd(const Tensor& dy, Tensor& dx) {
  const Shape xs = dx.shape();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j)
          dx.at(n, c, i, j) += dy.at(n, c, 2 * i, 2 * j) + dy.at(n, c, 2 * i, 2 * j + 1) +
                               dy.at(n, c, 2 * i + 1, 2 * j) + dy.at(n, c, 2 * i + 1, 2 * j + 1);
}

Moments channel_moments(const Tensor& x) {
  const Shape xs = x.shape();
  Moments m;
  m.mean.assign(xs.c, 0.0);
  m.var.assign(xs.c, 0.0);
  const int64_t cnt = static_cast<int64_t>(xs.n) * xs.h * xs.w;
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

}  // namespace ref
}  // namespace hic::kernels
