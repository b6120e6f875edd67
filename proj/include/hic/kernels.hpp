#pragma once

#include <utility>
#include <vector>

#include "hic/tensor.hpp"

// Compute kernels come in two interchangeable implementations:
//
//   kernels::ref  — naive nested-loop reference, kept as the ground truth
//                   the tests compare against;
//   kernels::par  — OpenMP-parallel version. Work is split over independent
//                   output elements and every per-element accumulation runs
//                   in the same order as the reference, so results are
//                   bit-identical regardless of thread count.
//
// The unqualified wrappers dispatch on a process-global switch (parallel by
// default). tools/bench_kernels compares the two.
namespace hic::kernels {

// floor((H + 2*pad - K)/stride) + 1 per spatial dim; validates arguments.
Shape conv2d_out_shape(const Shape& x, const Shape& w, int stride, int pad);

double sigmoid_scalar(double x);

struct MaxPoolResult {
  Tensor out;
  std::vector<int64_t> argmax;  // linear index into the input, per output element
};

struct Moments {
  std::vector<double> mean, var;  // per channel, biased variance
};

#define HIC_KERNEL_DECLS                                                            \
  Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const double* bias,           \
                    int stride, int pad);                                            \
  void conv2d_bwd_input(const Tensor& dy, const Tensor& w, int stride, int pad,     \
                        Tensor& dx);                                                 \
  void conv2d_bwd_weight(const Tensor& dy, const Tensor& x, int stride, int pad,    \
                         Tensor& dw);                                                \
  void conv2d_bwd_bias(const Tensor& dy, double* db);                               \
  MaxPoolResult maxpool_fwd(const Tensor& x, int k, int stride, int pad);           \
  void maxpool_bwd(const Tensor& dy, const std::vector<int64_t>& argmax,            \
                   Tensor& dx);                                                      \
  Tensor involution_fwd(const Tensor& x, const Tensor& ker, int k, int groups);     \
  void involution_bwd_input(const Tensor& dy, const Tensor& ker, int k,             \
                            int groups, Tensor& dx);                                 \
  void involution_bwd_kernel(const Tensor& dy, const Tensor& x, int k, int groups,  \
                             Tensor& dker);                                          \
  Tensor silu_fwd(const Tensor& x);                                                 \
  void silu_bwd(const Tensor& dy, const Tensor& x, Tensor& dx);                     \
  Tensor sigmoid_fwd(const Tensor& x);                                              \
  void sigmoid_bwd(const Tensor& dy, const Tensor& y, Tensor& dx);                  \
  Tensor upsample2x_fwd(const Tensor& x);                                           \
  void upsample2x_bwd(const Tensor& dy, Tensor& dx);                                \
  Moments channel_moments(const Tensor& x);

namespace ref {
HIC_KERNEL_DECLS
}
namespace par {
HIC_KERNEL_DECLS
}

#undef HIC_KERNEL_DECLS

bool parallel_enabled();
void set_parallel(bool on);

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const double* bias, int stride, int pad);
void conv2d_bwd_input(const Tensor& dy, const Tensor& w, int stride, int pad, Tensor& dx);
void conv2d_bwd_weight(const Tensor& dy, const Tensor& x, int stride, int pad, Tensor& dw);
void conv2d_bwd_bias(const Tensor& dy, double* db);
MaxPoolResult maxpool_fwd(const Tensor& x, int k, int stride, int pad);
void maxpool_bwd(const Tensor& dy, const std::vector<int64_t>& argmax, Tensor& dx);
Tensor involution_fwd(const Tensor& x, const Tensor& ker, int k, int groups);
void involution_bwd_input(const Tensor& dy, const Tensor& ker, int k, int groups, Tensor& dx);
void involution_bwd_kernel(const Tensor& dy, const Tensor& x, int k, int groups, Tensor& dker);
Tensor silu_fwd(const Tensor& x);
void silu_bwd(const Tensor& dy, const Tensor& x, Tensor& dx);
Tensor sigmoid_fwd(const Tensor& x);
void sigmoid_bwd(const Tensor& dy, const Tensor& y, Tensor& dx);
Tensor upsample2x_fwd(const Tensor& x);
void upsample2x_bwd(const Tensor& dy, Tensor& dx);
Moments channel_moments(const Tensor& x);

}  // namespace hic::kernels
