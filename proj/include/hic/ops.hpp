#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hic/kernels.hpp"
#include "hic/tensor.hpp"

namespace hic {

// Reverse-mode tape. Forward ops append one step each; backward() replays
// the steps in reverse, accumulating into the inputs' grad buffers. The tape
// is rebuilt every forward pass and is single-threaded by contract.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  void backward() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }
  void clear() { steps_.clear(); }
  size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// Learnable scale/shift plus running statistics. gamma/beta are (1,C,1,1)
// tensors so they serialize like any parameter; running stats are buffers.
struct BatchNormParams {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormParams make(int channels, double momentum = 0.1, double eps = 1e-5);
  int channels() const { return gamma.shape().c; }
};

namespace ops {

// bias may be an undefined Tensor for bias-free convolution; its shape is
// (1,Cout,1,1).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              Tape* tape);
Tensor batchnorm(const Tensor& x, BatchNormParams& bn, bool train, Tape* tape);
Tensor silu(const Tensor& x, Tape* tape);
Tensor sigmoid(const Tensor& x, Tape* tape);
Tensor relu(const Tensor& x, Tape* tape);
Tensor maxpool2d(const Tensor& x, int k, int stride, int pad, Tape* tape);
Tensor global_avgpool(const Tensor& x, Tape* tape);
Tensor global_maxpool(const Tensor& x, Tape* tape);
Tensor upsample_nearest2x(const Tensor& x, Tape* tape);
Tensor concat_channels(std::span<const Tensor> xs, Tape* tape);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
// x * gate with gate broadcast over H,W (gate shape (N,C,1,1))
Tensor mul_channel_gate(const Tensor& x, const Tensor& gate, Tape* tape);
// x * gate with gate broadcast over C (gate shape (N,1,H,W))
Tensor mul_spatial_gate(const Tensor& x, const Tensor& gate, Tape* tape);
Tensor channel_mean(const Tensor& x, Tape* tape);  // -> (N,1,H,W)
Tensor channel_max(const Tensor& x, Tape* tape);   // -> (N,1,H,W)
// Per-pixel mixing of Eq...: ker holds G*K*K generated kernel maps.
Tensor involution_mix(const Tensor& x, const Tensor& ker, int k, int groups, Tape* tape);

double sum(const Tensor& x);

}  // namespace ops

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  bool pass = false;
};

// Central finite differences of sum(f(x)) against the tape gradient.
// f must be a pure tensor function of its input. Aborts with NumericError
// on non-finite values.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                           const Tensor& input, double tol, double h = 1e-5);

}  // namespace hic
