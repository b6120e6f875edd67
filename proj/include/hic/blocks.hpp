#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hic/ops.hpp"

namespace hic {

using ParamVisitor =
    std::function<void(const std::string& name, Tensor& tensor, bool trainable)>;

enum class Act { none, silu, relu };

// Conv2d + optional BatchNorm + activation: the primitive every block is
// assembled from. Weight init is uniform in +-sqrt(1/(Cin*K^2)); biases and
// BN beta start at zero, BN gamma at one.
struct ConvUnit {
  Tensor w;     // (Cout, Cin, K, K)
  Tensor bias;  // (1, Cout, 1, 1); undefined when absent
  std::optional<BatchNormParams> bn;
  Act act = Act::silu;
  int stride = 1;
  int pad = 0;

  // pad < 0 selects k/2
  static ConvUnit make(int cin, int cout, int k, int stride, Rng& rng, bool with_bn,
                       Act act, bool with_bias, int pad = -1);

  Tensor forward(const Tensor& x, Tape* tape, bool train);
  void visit(const std::string& prefix, const ParamVisitor& v);
  int out_channels() const { return w.shape().n; }
};

// Graph node interface; ModelGraph wires nodes by layer index.
class Block {
 public:
  virtual ~Block() = default;
  virtual Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) = 0;
  virtual void visit_params(const std::string& /*prefix*/, const ParamVisitor& /*v*/) {}
  virtual std::string type_name() const = 0;
  virtual std::string args_str() const { return {}; }

  int out_ch = 0;
};

class ConvBlock : public Block {
 public:
  ConvBlock(int cin, int cout, int k, int stride, Rng& rng, int pad = -1);
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::string type_name() const override { return "Conv"; }
  std::string args_str() const override;

  ConvUnit cv;
};

struct Bottleneck {
  ConvUnit cv1, cv2;
  bool shortcut = true;

  Bottleneck(int cin, int cout, bool shortcut, Rng& rng);
  Tensor forward(const Tensor& x, Tape* tape, bool train);
  void visit(const std::string& prefix, const ParamVisitor& v);
};

// CSP-style block: bottleneck branch and bypass branch, concatenated and
// fused by a 1x1 conv.
class C3Block : public Block {
 public:
  C3Block(int cin, int cout, int n, bool shortcut, Rng& rng);
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::string type_name() const override { return "C3"; }
  std::string args_str() const override;

  ConvUnit cv1, cv2, cv3;
  std::vector<Bottleneck> m;
};

// Cascaded fixed-kernel max pooling; equivalent to SPP with kernels
// {k, 2k-1, 3k-2}.
class SPPFBlock : public Block {
 public:
  SPPFBlock(int cin, int cout, int k, Rng& rng);
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::string type_name() const override { return "SPPF"; }
  std::string args_str() const override;

  ConvUnit cv1, cv2;
  int k;
};

// Channel attention (pooled descriptors through a shared 2-layer MLP) then
// spatial attention (channel mean/max maps through a wide conv), each gating
// the features with a sigmoid map.
class CBAMBlock : public Block {
 public:
  CBAMBlock(int channels, int reduction, Rng& rng);
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::string type_name() const override { return "CBAM"; }
  std::string args_str() const override;

  // exposed for attention-map tests
  Tensor channel_gate(const Tensor& x, Tape* tape, bool train);
  Tensor spatial_gate(const Tensor& x, Tape* tape, bool train);

  ConvUnit fc1, fc2;      // shared MLP as 1x1 convs
  ConvUnit spatial_conv;  // 7x7, 2 -> 1
  int reduction;
};

// Location-specific, channel-shared kernels generated from the input itself:
// reduce (1x1, BN+SiLU) -> span (1x1) emits K*K*G maps; the mix applies them
// per pixel. Output passes through BN+SiLU like the surrounding Conv blocks.
class InvolutionBlock : public Block {
 public:
  InvolutionBlock(int channels, int k, int groups, int reduction, Rng& rng);
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::string type_name() const override { return "Involution"; }
  std::string args_str() const override;

  // kernel generator output, shape (N, G*K*K, H, W); exposed for tests
  Tensor generate_kernels(const Tensor& x, Tape* tape, bool train);

  ConvUnit reduce, span;
  BatchNormParams out_bn;
  int k, groups, reduction;
};

class UpsampleBlock : public Block {
 public:
  explicit UpsampleBlock(int channels) { out_ch = channels; }
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  std::string type_name() const override { return "Upsample2x"; }
};

class ConcatBlock : public Block {
 public:
  explicit ConcatBlock(int channels_total) { out_ch = channels_total; }
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  std::string type_name() const override { return "Concat"; }
};

// Raw 1x1 prediction conv: bias, no norm, no activation.
class HeadConv : public Block {
 public:
  HeadConv(int cin, int cout, Rng& rng);
  Tensor forward(std::span<const Tensor> in, Tape* tape, bool train) override;
  void visit_params(const std::string& prefix, const ParamVisitor& v) override;
  std::string type_name() const override { return "Head"; }
  std::string args_str() const override;

  ConvUnit cv;
};

int64_t count_trainable(Block& b);

}  // namespace hic
