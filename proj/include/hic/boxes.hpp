#pragma once

#include <array>
#include <string>
#include <vector>

#include "hic/anchors.hpp"
#include "hic/tensor.hpp"

namespace hic {

// Center-format box in pixels.
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  double x1() const { return cx - w / 2.0; }
  double y1() const { return cy - h / 2.0; }
  double x2() const { return cx + w / 2.0; }
  double y2() const { return cy + h / 2.0; }
  double area() const { return w * h; }
  static Box from_corners(double x1, double y1, double x2, double y2) {
    return Box{(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
  }
};

double iou(const Box& a, const Box& b);

struct CiouResult {
  double loss = 0.0;
  // gradient w.r.t. pred (cx, cy, w, h)
  double dcx = 0.0, dcy = 0.0, dw = 0.0, dh = 0.0;
};

// 1 - IoU + rho^2/c^2 + alpha*v with alpha = v/((1-IoU)+v); the gradient
// differentiates the full expression including alpha's dependence on pred.
CiouResult ciou_loss(const Box& pred, const Box& gt);

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
};

// bx = (2*sig(tx) - 0.5 + cell_x) * stride, bw = (2*sig(tw))^2 * aw * stride;
// anchors are in grid units of this head. Channel layout per anchor:
// tx, ty, tw, th, obj, then class logits. score = sig(obj) * max_c sig(cls).
std::vector<Detection> decode(const Tensor& raw_head,
                              const std::array<AnchorPair, 3>& anchors, int stride,
                              double conf_thresh, int batch_index = 0);

// Inverse of the decode transform for a known cell/anchor; interior boxes only.
struct HeadLogits {
  double tx, ty, tw, th;
};
HeadLogits encode_box(const Box& px, int cell_x, int cell_y, const AnchorPair& anchor_grid,
                      int stride);

// Greedy by descending score with deterministic tie-break (score desc,
// class asc, cx asc, cy asc); suppression at IoU > thresh, within the same
// class when class_aware.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh,
                           bool class_aware = true);

// `image_id class_id score cx cy w h`, six decimals.
std::string format_detection(const std::string& image_id, const Detection& d);
bool parse_detection_line(const std::string& line, std::string& image_id, Detection& d);

}  // namespace hic
