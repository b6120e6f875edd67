#include "hic/blocks.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>

namespace hic {

namespace {

std::string fmt_args(const char* fmt, ...) {
  char buf[128];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  return buf;
}

}  // namespace

ConvUnit ConvUnit::make(int cin, int cout, int k, int stride, Rng& rng, bool with_bn,
                        Act act, bool with_bias, int pad) {
  check_shape(cin >= 1 && cout >= 1 && k >= 1, "conv unit: bad channel/kernel spec");
  ConvUnit u;
  const double bound = std::sqrt(1.0 / (static_cast<double>(cin) * k * k));
  u.w = Tensor::uniform(Shape{cout, cin, k, k}, rng, -bound, bound);
  if (with_bias) u.bias = Tensor::zeros(Shape{1, cout, 1, 1});
  if (with_bn) u.bn = BatchNormParams::make(cout);
  u.act = act;
  u.stride = stride;
  u.pad = pad < 0 ? k / 2 : pad;
  return u;
}

Tensor ConvUnit::forward(const Tensor& x, Tape* tape, bool train) {
  Tensor y = ops::conv2d(x, w, bias, stride, pad, tape);
  if (bn) y = ops::batchnorm(y, *bn, train, tape);
  switch (act) {
    case Act::silu: return ops::silu(y, tape);
    case Act::relu: return ops::relu(y, tape);
    case Act::none: return y;
  }
  return y;
}

void ConvUnit::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".weight", w, true);
  if (bias.defined()) v(prefix + ".bias", bias, true);
  if (bn) {
    v(prefix + ".bn.gamma", bn->gamma, true);
    v(prefix + ".bn.beta", bn->beta, true);
    v(prefix + ".bn.running_mean", bn->running_mean, false);
    v(prefix + ".bn.running_var", bn->running_var, false);
  }
}

ConvBlock::ConvBlock(int cin, int cout, int k, int stride, Rng& rng, int pad) {
  cv = ConvUnit::make(cin, cout, k, stride, rng, true, Act::silu, false, pad);
  out_ch = cout;
}

Tensor ConvBlock::forward(std::span<const Tensor> in, Tape* tape, bool train) {
  return cv.forward(in[0], tape, train);
}

void ConvBlock::visit_params(const std::string& prefix, const ParamVisitor& v) {
  cv.visit(prefix, v);
}

std::string ConvBlock::args_str() const {
  return fmt_args("k=%d s=%d", cv.w.shape().h, cv.stride);
}

Bottleneck::Bottleneck(int cin, int cout, bool shortcut_, Rng& rng)
    : cv1(ConvUnit::make(cin, cout, 1, 1, rng, true, Act::silu, false)),
      cv2(ConvUnit::make(cout, cout, 3, 1, rng, true, Act::silu, false)),
      shortcut(shortcut_ && cin == cout) {}

Tensor Bottleneck::forward(const Tensor& x, Tape* tape, bool train) {
  Tensor y = cv2.forward(cv1.forward(x, tape, train), tape, train);
  return shortcut ? ops::add(x, y, tape) : y;
}

void Bottleneck::visit(const std::string& prefix, const ParamVisitor& v) {
  cv1.visit(prefix + ".cv1", v);
  cv2.visit(prefix + ".cv2", v);
}

C3Block::C3Block(int cin, int cout, int n, bool shortcut, Rng& rng)
    : cv1(ConvUnit::make(cin, cout / 2, 1, 1, rng, true, Act::silu, false)),
      cv2(ConvUnit::make(cin, cout / 2, 1, 1, rng, true, Act::silu, false)),
      cv3(ConvUnit::make(cout / 2 * 2, cout, 1, 1, rng, true, Act::silu, false)) {
  check_shape(cout >= 2, "c3: output channels must be >= 2");
  m.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) m.emplace_back(cout / 2, cout / 2, shortcut, rng);
  out_ch = cout;
}

Tensor C3Block::forward(std::span<const Tensor> in, Tape* tape, bool train) {
  Tensor a = cv1.forward(in[0], tape, train);
  for (Bottleneck& b : m) a = b.forward(a, tape, train);
  Tensor b = cv2.forward(in[0], tape, train);
  const Tensor parts[] = {a, b};
  return cv3.forward(ops::concat_channels(parts, tape), tape, train);
}

void C3Block::visit_params(const std::string& prefix, const ParamVisitor& v) {
  cv1.visit(prefix + ".cv1", v);
  cv2.visit(prefix + ".cv2", v);
  cv3.visit(prefix + ".cv3", v);
  for (size_t i = 0; i < m.size(); ++i) m[i].visit(prefix + ".m" + std::to_string(i), v);
}

std::string C3Block::args_str() const {
  return fmt_args("n=%zu shortcut=%d", m.size(), m.empty() ? 0 : (m[0].shortcut ? 1 : 0));
}

SPPFBlock::SPPFBlock(int cin, int cout, int k_, Rng& rng)
    : cv1(ConvUnit::make(cin, cin / 2, 1, 1, rng, true, Act::silu, false)),
      cv2(ConvUnit::make(cin / 2 * 4, cout, 1, 1, rng, true, Act::silu, false)),
      k(k_) {
  check_shape(k_ % 2 == 1, "sppf: pooling kernel must be odd");
  out_ch = cout;
}

Tensor SPPFBlock::forward(std::span<const Tensor> in, Tape* tape, bool train) {
  Tensor x = cv1.forward(in[0], tape, train);
  Tensor p1 = ops::maxpool2d(x, k, 1, k / 2, tape);
  Tensor p2 = ops::maxpool2d(p1, k, 1, k / 2, tape);
  Tensor p3 = ops::maxpool2d(p2, k, 1, k / 2, tape);
  const Tensor parts[] = {x, p1, p2, p3};
  return cv2.forward(ops::concat_channels(parts, tape), tape, train);
}

void SPPFBlock::visit_params(const std::string& prefix, const ParamVisitor& v) {
  cv1.visit(prefix + ".cv1", v);
  cv2.visit(prefix + ".cv2", v);
}

std::string SPPFBlock::args_str() const { return fmt_args("k=%d", k); }

CBAMBlock::CBAMBlock(int channels, int reduction_, Rng& rng)
    : fc1(ConvUnit::make(channels, std::max(1, channels / reduction_), 1, 1, rng, false,
                         Act::none, true)),
      fc2(ConvUnit::make(std::max(1, channels / reduction_), channels, 1, 1, rng, false,
                         Act::none, true)),
      spatial_conv(ConvUnit::make(2, 1, 7, 1, rng, false, Act::none, true)),
      reduction(reduction_) {
  out_ch = channels;
}

Tensor CBAMBlock::channel_gate(const Tensor& x, Tape* tape, bool train) {
  auto mlp = [&](const Tensor& p) {
    Tensor h = ops::relu(fc1.forward(p, tape, train), tape);
    return fc2.forward(h, tape, train);
  };
  Tensor a = mlp(ops::global_avgpool(x, tape));
  Tensor m = mlp(ops::global_maxpool(x, tape));
  return ops::sigmoid(ops::add(a, m, tape), tape);
}

Tensor CBAMBlock::spatial_gate(const Tensor& x, Tape* tape, bool train) {
  const Tensor maps[] = {ops::channel_mean(x, tape), ops::channel_max(x, tape)};
  Tensor cat = ops::concat_channels(maps, tape);
  return ops::sigmoid(spatial_conv.forward(cat, tape, train), tape);
}

Tensor CBAMBlock::forward(std::span<const Tensor> in, Tape* tape, bool train) {
  // channel attention first, then spatial attention on the refined map
  Tensor mc = channel_gate(in[0], tape, train);
  Tensor xc = ops::mul_channel_gate(in[0], mc, tape);
  Tensor ms = spatial_gate(xc, tape, train);
  return ops::mul_spatial_gate(xc, ms, tape);
}

void CBAMBlock::visit_params(const std::string& prefix, const ParamVisitor& v) {
  fc1.visit(prefix + ".fc1", v);
  fc2.visit(prefix + ".fc2", v);
  spatial_conv.visit(prefix + ".spatial", v);
}

std::string CBAMBlock::args_str() const { return fmt_args("rc=%d", reduction); }

InvolutionBlock::InvolutionBlock(int channels, int k_, int groups_, int reduction_, Rng& rng)
    : reduce(ConvUnit::make(channels, std::max(1, channels / reduction_), 1, 1, rng, true,
                            Act::silu, false)),
      span(ConvUnit::make(std::max(1, channels / reduction_), k_ * k_ * groups_, 1, 1, rng,
                          false, Act::none, true)),
      out_bn(BatchNormParams::make(channels)),
      k(k_),
      groups(groups_),
      reduction(reduction_) {
  check_shape(k_ % 2 == 1, "involution: kernel size must be odd");
  check_shape(groups_ >= 1 && channels % groups_ == 0,
              "involution: groups G=" + std::to_string(groups_) +
                  " must divide C=" + std::to_string(channels));
  out_ch = channels;
}

Tensor InvolutionBlock::generate_kernels(const Tensor& x, Tape* tape, bool train) {
  return span.forward(reduce.forward(x, tape, train), tape, train);
}

Tensor InvolutionBlock::forward(std::span<const Tensor> in, Tape* tape, bool train) {
  Tensor ker = generate_kernels(in[0], tape, train);
  Tensor y = ops::involution_mix(in[0], ker, k, groups, tape);
  return ops::silu(ops::batchnorm(y, out_bn, train, tape), tape);
}

void InvolutionBlock::visit_params(const std::string& prefix, const ParamVisitor& v) {
  reduce.visit(prefix + ".reduce", v);
  span.visit(prefix + ".span", v);
  v(prefix + ".bn.gamma", out_bn.gamma, true);
  v(prefix + ".bn.beta", out_bn.beta, true);
  v(prefix + ".bn.running_mean", out_bn.running_mean, false);
  v(prefix + ".bn.running_var", out_bn.running_var, false);
}

std::string InvolutionBlock::args_str() const {
  return fmt_args("k=%d g=%d r=%d", k, groups, reduction);
}

Tensor UpsampleBlock::forward(std::span<const Tensor> in, Tape* tape, bool) {
  return ops::upsample_nearest2x(in[0], tape);
}

Tensor ConcatBlock::forward(std::span<const Tensor> in, Tape* tape, bool) {
  return ops::concat_channels(in, tape);
}

HeadConv::HeadConv(int cin, int cout, Rng& rng) {
  cv = ConvUnit::make(cin, cout, 1, 1, rng, false, Act::none, true);
  out_ch = cout;
}

Tensor HeadConv::forward(std::span<const Tensor> in, Tape* tape, bool train) {
  return cv.forward(in[0], tape, train);
}

void HeadConv::visit_params(const std::string& prefix, const ParamVisitor& v) {
  cv.visit(prefix, v);
}

std::string HeadConv::args_str() const {
  return fmt_args("cout=%d", cv.out_channels());
}

int64_t count_trainable(Block& b) {
  int64_t total = 0;
  b.visit_params("x", [&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) total += t.numel();
  });
  return total;
}

}  // namespace hic
