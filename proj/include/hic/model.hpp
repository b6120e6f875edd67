#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hic/anchors.hpp"
#include "hic/blocks.hpp"

namespace hic {

struct InvolutionCfg {
  int k = 3, g = 4, r = 4;
};
struct CbamCfg {
  int rc = 16;
};

struct ModelConfig {
  double depth_multiple = 0.33;
  double width_multiple = 0.50;
  int num_classes = 10;
  int input_size = 640;   // square, divisible by 32
  int num_heads = 4;      // 4 = with the stride-4 head, 3 = stock layout
  bool use_cbam = true;
  bool use_involution = true;
  InvolutionCfg involution;
  CbamCfg cbam;
  AnchorSet anchors = AnchorSet::defaults();
  uint64_t seed = 0;

  void validate() const;
  std::string canonical() const;  // fixed key order, full precision
  uint64_t hash() const { return fnv1a64(canonical()); }

  static ModelConfig load(const std::string& path);
  void save(const std::string& path) const;
};

struct Parameter {
  std::string name;
  Tensor tensor;  // shared handle into the owning graph
  bool trainable = true;
};

struct LayerCount {
  int index = 0;
  std::string name, type, args;
  int out_ch = 0;
  int64_t params = 0;
};

struct ParamCountReport {
  std::vector<LayerCount> layers;
  int64_t backbone = 0, neck = 0, heads = 0, total = 0;
  std::string table() const;
};

// The assembled detector: backbone Conv/C3/SPPF (+CBAM tail), involution
// bridge, FPN+PAN neck and 3 or 4 raw prediction convs.
class ModelGraph {
 public:
  static ModelGraph build(const ModelConfig& cfg);

  // images (N,3,S,S) in [0,1] -> raw head maps, stride-ascending
  std::vector<Tensor> forward(const Tensor& images, Tape* tape, bool train);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<int>& strides() const { return strides_; }
  // anchors for head h in grid units of its stride
  std::array<AnchorPair, 3> head_anchors_grid(int head) const;

  std::vector<Parameter> parameters();
  ParamCountReport count_parameters() const;
  void describe(std::ostream& os) const;

  void save_checkpoint(const std::string& path,
                       const std::vector<Parameter>& extras = {}) const;
  static ModelGraph load_checkpoint(const std::string& path, const ModelConfig& cfg);

 private:
  struct Layer {
    std::string name;
    std::vector<int> from;  // indices of producing layers; -1 = graph input
    std::unique_ptr<Block> block;
  };

  ModelConfig cfg_;
  std::vector<Layer> layers_;
  std::vector<int> head_layers_;
  std::vector<int> strides_;
};

// Raw checkpoint access (used by the trainer for optimizer state).
std::vector<Parameter> read_checkpoint_entries(const std::string& path,
                                               uint64_t expected_hash);

}  // namespace hic
