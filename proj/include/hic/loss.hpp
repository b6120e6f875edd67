#pragma once

#include <span>
#include <vector>

#include "hic/anchors.hpp"
#include "hic/tensor.hpp"

namespace hic {

// Eq-weighted composite loss: total = obj_w*obj + box_w*box + cls_w*cls.
struct LossWeights {
  double obj = 0.5;
  double box = 0.05;
  double cls = 0.25;
};

// Ground truth in normalized center format, all fields in (0,1].
struct GtBox {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
};

struct HeadGeometry {
  int stride = 0;
  int grid = 0;                          // cells per side
  std::array<AnchorPair, 3> anchors;     // grid units of this head
};

struct AssignedTarget {
  int image = 0;
  int head = 0;
  int anchor = 0;
  int cell_x = 0, cell_y = 0;
  GtBox gt;
  int gt_index = 0;
};

// A gt matches anchor a of a head iff max(w/aw, aw/w, h/ah, ah/h) < ratio_thresh
// in that head's grid units; each match lands in the containing cell plus the
// horizontal and vertical neighbors nearest the center (0.5-offset rule).
// Matches may repeat across heads.
std::vector<AssignedTarget> assign(std::span<const std::vector<GtBox>> gts_per_image,
                                   std::span<const HeadGeometry> heads,
                                   double ratio_thresh = 4.0);

struct LossResult {
  double total = 0.0;
  double obj = 0.0, box = 0.0, cls = 0.0;  // unweighted components
};

// Objectness: BCE-with-logits over every anchor-cell of every head, pooled
// mean, target 1 at assigned slots. Class: mean BCE over assigned cells
// against one-hot. Box: mean CIoU between the decoded prediction and the gt,
// both in grid units. With want_grad the (weighted) gradient accumulates
// into each raw head's grad buffer.
LossResult loss(std::vector<Tensor>& raw_heads, std::span<const HeadGeometry> heads,
                std::span<const AssignedTarget> targets, const LossWeights& weights,
                int num_classes, bool want_grad);

// Numerically stable log(1 + e^-|z|) form.
double bce_with_logits(double logit, double target);

}  // namespace hic
