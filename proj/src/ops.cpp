#include "hic/ops.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace hic {

BatchNormParams BatchNormParams::make(int channels, double momentum, double eps) {
  check_data(eps > 0.0, "batchnorm: eps must be positive");
  BatchNormParams bn;
  bn.gamma = Tensor::ones(Shape{1, channels, 1, 1});
  bn.beta = Tensor::zeros(Shape{1, channels, 1, 1});
  bn.running_mean = Tensor::zeros(Shape{1, channels, 1, 1});
  bn.running_var = Tensor::ones(Shape{1, channels, 1, 1});
  bn.momentum = momentum;
  bn.eps = eps;
  return bn;
}

namespace ops {
namespace {

// Copy of a tensor's gradient as a plain value tensor (zeros when absent).
Tensor grad_of(const Tensor& t) {
  Tensor g(t.shape());
  if (t.has_grad()) std::memcpy(g.data(), t.grad(), sizeof(double) * t.numel());
  return g;
}

void accumulate(Tensor& t, const Tensor& delta) {
  t.ensure_grad();
  double* dst = t.grad();
  const double* src = delta.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              Tape* tape) {
  if (bias.defined())
    check_shape(bias.shape().c == w.shape().n && bias.numel() == w.shape().n,
                "conv2d: bias length " + std::to_string(bias.numel()) +
                    " does not match Cout=" + std::to_string(w.shape().n));
  Tensor y = kernels::conv2d_fwd(x, w, bias.defined() ? bias.data() : nullptr, stride, pad);
  if (tape) {
    Tensor xc = x, wc = w, bc = bias, yc = y;
    tape->record([xc, wc, bc, yc, stride, pad]() mutable {
      if (!yc.has_grad()) return;
      const Tensor gy = grad_of(yc);
      Tensor gx(xc.shape());
      kernels::conv2d_bwd_input(gy, wc, stride, pad, gx);
      accumulate(xc, gx);
      Tensor gw(wc.shape());
      kernels::conv2d_bwd_weight(gy, xc, stride, pad, gw);
      accumulate(wc, gw);
      if (bc.defined()) {
        Tensor gb(bc.shape());
        kernels::conv2d_bwd_bias(gy, gb.data());
        accumulate(bc, gb);
      }
    });
  }
  return y;
}

Tensor batchnorm(const Tensor& x, BatchNormParams& bn, bool train, Tape* tape) {
  const Shape xs = x.shape();
  check_data(bn.eps > 0.0, "batchnorm: eps must be positive");
  check_shape(bn.channels() == xs.c, "batchnorm: parameter channels " +
                                         std::to_string(bn.channels()) +
                                         " do not match input C=" + std::to_string(xs.c));
  const int64_t per_channel = static_cast<int64_t>(xs.n) * xs.h * xs.w;
  std::vector<double> mean(xs.c), invstd(xs.c);
  if (train) {
    kernels::Moments mo = kernels::channel_moments(x);
    for (int c = 0; c < xs.c; ++c) {
      mean[c] = mo.mean[c];
      invstd[c] = 1.0 / std::sqrt(mo.var[c] + bn.eps);
    }
    // running stats use the unbiased variance, normalization the biased one
    const double m = bn.momentum;
    const double unbias =
        per_channel > 1 ? static_cast<double>(per_channel) / static_cast<double>(per_channel - 1)
                        : 1.0;
    for (int c = 0; c < xs.c; ++c) {
      bn.running_mean.data()[c] = (1.0 - m) * bn.running_mean.data()[c] + m * mo.mean[c];
      bn.running_var.data()[c] = (1.0 - m) * bn.running_var.data()[c] + m * mo.var[c] * unbias;
    }
  } else {
    for (int c = 0; c < xs.c; ++c) {
      mean[c] = bn.running_mean.data()[c];
      invstd[c] = 1.0 / std::sqrt(bn.running_var.data()[c] + bn.eps);
    }
  }

  Tensor xhat(xs);
  Tensor y(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const double g = bn.gamma.data()[c], b = bn.beta.data()[c];
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) {
          const double xh = (x.at(n, c, i, j) - mean[c]) * invstd[c];
          xhat.at(n, c, i, j) = xh;
          y.at(n, c, i, j) = xh * g + b;
        }
    }

  if (tape) {
    Tensor xc = x, yc = y, xhc = xhat, gcap = bn.gamma, bcap = bn.beta;
    tape->record([xc, yc, xhc, gcap, bcap, invstd, per_channel, train]() mutable {
      if (!yc.has_grad()) return;
      const Shape s = xc.shape();
      const Tensor gy = grad_of(yc);
      Tensor gx(s);
      Tensor ggamma(gcap.shape()), gbeta(bcap.shape());
      for (int c = 0; c < s.c; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int n = 0; n < s.n; ++n)
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
              const double g = gy.at(n, c, i, j);
              s1 += g;
              s2 += g * xhc.at(n, c, i, j);
            }
        ggamma.data()[c] = s2;
        gbeta.data()[c] = s1;
        const double gam = gcap.data()[c];
        const double cnt = static_cast<double>(per_channel);
        for (int n = 0; n < s.n; ++n)
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
              const double g = gy.at(n, c, i, j);
              double d;
              if (train) {
                d = gam * invstd[c] * (g - s1 / cnt - xhc.at(n, c, i, j) * s2 / cnt);
              } else {
                d = gam * invstd[c] * g;
              }
              gx.at(n, c, i, j) = d;
            }
      }
      accumulate(xc, gx);
      accumulate(gcap, ggamma);
      accumulate(bcap, gbeta);
    });
  }
  return y;
}

Tensor silu(const Tensor& x, Tape* tape) {
  Tensor y = kernels::silu_fwd(x);
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const Tensor gy = grad_of(yc);
      Tensor gx(xc.shape());
      kernels::silu_bwd(gy, xc, gx);
      accumulate(xc, gx);
    });
  }
  return y;
}

Tensor sigmoid(const Tensor& x, Tape* tape) {
  Tensor y = kernels::sigmoid_fwd(x);
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const Tensor gy = grad_of(yc);
      Tensor gx(xc.shape());
      kernels::sigmoid_bwd(gy, yc, gx);
      accumulate(xc, gx);
    });
  }
  return y;
}

Tensor relu(const Tensor& x, Tape* tape) {
  Tensor y(x.shape());
  const double* xv = x.data();
  double* yv = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      const double* g = yc.grad();
      const double* xv2 = xc.data();
      double* d = xc.grad();
      const int64_t m = xc.numel();
      for (int64_t i = 0; i < m; ++i)
        if (xv2[i] > 0.0) d[i] += g[i];
    });
  }
  return y;
}

Tensor maxpool2d(const Tensor& x, int k, int stride, int pad, Tape* tape) {
  kernels::MaxPoolResult r = kernels::maxpool_fwd(x, k, stride, pad);
  if (tape) {
    Tensor xc = x, yc = r.out;
    std::vector<int64_t> am = r.argmax;
    tape->record([xc, yc, am = std::move(am)]() mutable {
      if (!yc.has_grad()) return;
      const Tensor gy = grad_of(yc);
      Tensor gx(xc.shape());
      kernels::maxpool_bwd(gy, am, gx);
      accumulate(xc, gx);
    });
  }
  return r.out;
}

Tensor global_avgpool(const Tensor& x, Tape* tape) {
  const Shape xs = x.shape();
  Tensor y(Shape{xs.n, xs.c, 1, 1});
  const double inv = 1.0 / (static_cast<double>(xs.h) * xs.w);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      double s = 0.0;
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) s += x.at(n, c, i, j);
      y.at(n, c, 0, 0) = s * inv;
    }
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc, inv]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      const Shape s = xc.shape();
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const double g = yc.grad()[yc.index(n, c, 0, 0)] * inv;
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) xc.grad()[xc.index(n, c, i, j)] += g;
        }
    });
  }
  return y;
}

Tensor global_maxpool(const Tensor& x, Tape* tape) {
  const Shape xs = x.shape();
  Tensor y(Shape{xs.n, xs.c, 1, 1});
  std::vector<int64_t> argmax(static_cast<size_t>(xs.n) * xs.c);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      int64_t bi = -1;
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) {
          const double v = x.at(n, c, i, j);
          if (v > best) {
            best = v;
            bi = x.index(n, c, i, j);
          }
        }
      y.at(n, c, 0, 0) = best;
      argmax[static_cast<size_t>(n) * xs.c + c] = bi;
    }
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc, argmax = std::move(argmax)]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      for (size_t i = 0; i < argmax.size(); ++i)
        xc.grad()[argmax[i]] += yc.grad()[static_cast<int64_t>(i)];
    });
  }
  return y;
}

Tensor upsample_nearest2x(const Tensor& x, Tape* tape) {
  Tensor y = kernels::upsample2x_fwd(x);
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const Tensor gy = grad_of(yc);
      Tensor gx(xc.shape());
      kernels::upsample2x_bwd(gy, gx);
      accumulate(xc, gx);
    });
  }
  return y;
}

Tensor concat_channels(std::span<const Tensor> xs, Tape* tape) {
  check_shape(!xs.empty(), "concat: no inputs");
  const Shape s0 = xs[0].shape();
  int ctotal = 0;
  for (const Tensor& t : xs) {
    const Shape s = t.shape();
    check_shape(s.n == s0.n && s.h == s0.h && s.w == s0.w,
                "concat: spatial/batch mismatch " + s.str() + " vs " + s0.str());
    ctotal += s.c;
  }
  Tensor y(Shape{s0.n, ctotal, s0.h, s0.w});
  const int64_t plane = static_cast<int64_t>(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    int coff = 0;
    for (const Tensor& t : xs) {
      const int tc = t.shape().c;
      std::memcpy(y.data() + (static_cast<int64_t>(n) * ctotal + coff) * plane,
                  t.data() + static_cast<int64_t>(n) * tc * plane,
                  sizeof(double) * static_cast<size_t>(tc) * plane);
      coff += tc;
    }
  }
  if (tape) {
    std::vector<Tensor> ins(xs.begin(), xs.end());
    Tensor yc = y;
    tape->record([ins, yc, ctotal, plane]() mutable {
      if (!yc.has_grad()) return;
      const int nb = yc.shape().n;
      for (int n = 0; n < nb; ++n) {
        int coff = 0;
        for (Tensor& t : ins) {
          t.ensure_grad();
          const int tc = t.shape().c;
          const double* src = yc.grad() + (static_cast<int64_t>(n) * ctotal + coff) * plane;
          double* dst = t.grad() + static_cast<int64_t>(n) * tc * plane;
          for (int64_t i = 0; i < tc * plane; ++i) dst[i] += src[i];
          coff += tc;
        }
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check_shape(a.shape() == b.shape(),
              "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor y(a.shape());
  const double* av = a.data();
  const double* bv = b.data();
  double* yv = y.data();
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) yv[i] = av[i] + bv[i];
  if (tape) {
    Tensor ac = a, bc = b, yc = y;
    tape->record([ac, bc, yc]() mutable {
      if (!yc.has_grad()) return;
      ac.ensure_grad();
      bc.ensure_grad();
      const double* g = yc.grad();
      double* da = ac.grad();
      double* db = bc.grad();
      const int64_t m = yc.numel();
      for (int64_t i = 0; i < m; ++i) {
        da[i] += g[i];
        db[i] += g[i];
      }
    });
  }
  return y;
}

Tensor mul_channel_gate(const Tensor& x, const Tensor& gate, Tape* tape) {
  const Shape xs = x.shape(), gs = gate.shape();
  check_shape(gs.n == xs.n && gs.c == xs.c && gs.h == 1 && gs.w == 1,
              "channel gate must be (N,C,1,1), got " + gs.str());
  Tensor y(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const double g = gate.at(n, c, 0, 0);
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j) y.at(n, c, i, j) = x.at(n, c, i, j) * g;
    }
  if (tape) {
    Tensor xc = x, gc = gate, yc = y;
    tape->record([xc, gc, yc]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      gc.ensure_grad();
      const Shape s = xc.shape();
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const double g = gc.at(n, c, 0, 0);
          double acc = 0.0;
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
              const int64_t idx = yc.index(n, c, i, j);
              const double up = yc.grad()[idx];
              xc.grad()[idx] += up * g;
              acc += up * xc.data()[idx];
            }
          gc.grad()[gc.index(n, c, 0, 0)] += acc;
        }
    });
  }
  return y;
}

Tensor mul_spatial_gate(const Tensor& x, const Tensor& gate, Tape* tape) {
  const Shape xs = x.shape(), gs = gate.shape();
  check_shape(gs.n == xs.n && gs.c == 1 && gs.h == xs.h && gs.w == xs.w,
              "spatial gate must be (N,1,H,W), got " + gs.str());
  Tensor y(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int i = 0; i < xs.h; ++i)
        for (int j = 0; j < xs.w; ++j)
          y.at(n, c, i, j) = x.at(n, c, i, j) * gate.at(n, 0, i, j);
  if (tape) {
    Tensor xc = x, gc = gate, yc = y;
    tape->record([xc, gc, yc]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      gc.ensure_grad();
      const Shape s = xc.shape();
      for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) {
            const double g = gc.at(n, 0, i, j);
            double acc = 0.0;
            for (int c = 0; c < s.c; ++c) {
              const int64_t idx = yc.index(n, c, i, j);
              const double up = yc.grad()[idx];
              xc.grad()[idx] += up * g;
              acc += up * xc.data()[idx];
            }
            gc.grad()[gc.index(n, 0, i, j)] += acc;
          }
    });
  }
  return y;
}

Tensor channel_mean(const Tensor& x, Tape* tape) {
  const Shape xs = x.shape();
  Tensor y(Shape{xs.n, 1, xs.h, xs.w});
  const double inv = 1.0 / xs.c;
  for (int n = 0; n < xs.n; ++n)
    for (int i = 0; i < xs.h; ++i)
      for (int j = 0; j < xs.w; ++j) {
        double s = 0.0;
        for (int c = 0; c < xs.c; ++c) s += x.at(n, c, i, j);
        y.at(n, 0, i, j) = s * inv;
      }
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc, inv]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      const Shape s = xc.shape();
      for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) {
            const double g = yc.grad()[yc.index(n, 0, i, j)] * inv;
            for (int c = 0; c < s.c; ++c) xc.grad()[xc.index(n, c, i, j)] += g;
          }
    });
  }
  return y;
}

Tensor channel_max(const Tensor& x, Tape* tape) {
  const Shape xs = x.shape();
  Tensor y(Shape{xs.n, 1, xs.h, xs.w});
  std::vector<int> argc(static_cast<size_t>(xs.n) * xs.h * xs.w);
  size_t k = 0;
  for (int n = 0; n < xs.n; ++n)
    for (int i = 0; i < xs.h; ++i)
      for (int j = 0; j < xs.w; ++j, ++k) {
        double best = -std::numeric_limits<double>::infinity();
        int bc = -1;
        for (int c = 0; c < xs.c; ++c) {
          const double v = x.at(n, c, i, j);
          if (v > best) {
            best = v;
            bc = c;
          }
        }
        y.at(n, 0, i, j) = best;
        argc[k] = bc;
      }
  if (tape) {
    Tensor xc = x, yc = y;
    tape->record([xc, yc, argc = std::move(argc)]() mutable {
      if (!yc.has_grad()) return;
      xc.ensure_grad();
      const Shape s = xc.shape();
      size_t k2 = 0;
      for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j, ++k2)
            xc.grad()[xc.index(n, argc[k2], i, j)] += yc.grad()[yc.index(n, 0, i, j)];
    });
  }
  return y;
}

Tensor involution_mix(const Tensor& x, const Tensor& ker, int k, int groups, Tape* tape) {
  Tensor y = kernels::involution_fwd(x, ker, k, groups);
  if (tape) {
    Tensor xc = x, kc = ker, yc = y;
    tape->record([xc, kc, yc, k, groups]() mutable {
      if (!yc.has_grad()) return;
      const Tensor gy = grad_of(yc);
      Tensor gx(xc.shape());
      kernels::involution_bwd_input(gy, kc, k, groups, gx);
      accumulate(xc, gx);
      Tensor gk(kc.shape());
      kernels::involution_bwd_kernel(gy, xc, k, groups, gk);
      accumulate(kc, gk);
    });
  }
  return y;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

}  // namespace ops

GradCheckReport grad_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                           const Tensor& input, double tol, double h) {
  Tensor x = input.clone();
  Tape tape;
  Tensor y = f(x, &tape);
  if (!y.all_finite()) throw NumericError("grad_check: forward produced non-finite values");
  y.ensure_grad();
  std::fill(y.grad_span().begin(), y.grad_span().end(), 1.0);
  tape.backward();

  std::vector<double> analytic(static_cast<size_t>(x.numel()), 0.0);
  if (x.has_grad())
    std::copy(x.grad(), x.grad() + x.numel(), analytic.begin());
  for (double v : analytic)
    if (!std::isfinite(v)) throw NumericError("grad_check: analytic gradient non-finite");

  GradCheckReport rep;
  for (int64_t i = 0; i < input.numel(); ++i) {
    Tensor xp = input.clone();
    xp.data()[i] += h;
    const double fp = ops::sum(f(xp, nullptr));
    Tensor xm = input.clone();
    xm.data()[i] -= h;
    const double fm = ops::sum(f(xm, nullptr));
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: finite-difference evaluation non-finite");
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<size_t>(i)];
    const double rel = std::abs(a - numeric) /
                       std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace hic
