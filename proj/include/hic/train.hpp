#pragma once

#include <limits>
#include <string>
#include <vector>

#include "hic/data.hpp"
#include "hic/model.hpp"

namespace hic {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double lr = 0.001;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int patience = 15;
  LossWeights weights;
  bool center_crop = false;
  bool hsv = false;
  double hsv_h = 0.4, hsv_s = 0.3, hsv_v = 0.5;
  uint64_t seed = 0;
  std::string out_checkpoint;  // written at the end of training (with optimizer state)
  std::string curve_path;      // per-epoch `epoch train_loss val_loss` lines
  std::string resume_from;     // checkpoint written by a previous run
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0, val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_run = 0;
  bool early_stopped = false;
};

class Adam {
 public:
  Adam(std::vector<Parameter> trainable, double lr, double beta1, double beta2, double eps);

  void zero_grad();
  void step();
  int64_t steps() const { return t_; }
  void set_lr(double lr) { lr_ = lr; }

  // serializable state: optim.m.<param>, optim.v.<param>, optim.meta
  std::vector<Parameter> state_entries() const;
  void load_state(const std::vector<Parameter>& entries);

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
  double lr_, b1_, b2_, eps_;
};

std::vector<HeadGeometry> head_geometry(const ModelGraph& g);

// Deterministic full training loop: per-epoch reseeded shuffling and
// augmentation, Adam updates, validation-loss early stopping. Aborts with
// NumericError when the loss diverges.
TrainResult train(ModelGraph& graph, const std::vector<LabeledImage>& train_set,
                  const std::vector<LabeledImage>& val_set, const TrainConfig& cfg);

}  // namespace hic
