#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hic/boxes.hpp"

namespace hic {

struct DetRecord {
  std::string image_id;
  Detection det;
};

struct GtRecord {
  std::string image_id;
  int class_id = 0;
  Box box;
};

struct MatchResult {
  std::vector<char> tp;   // one flag per detection, in the given (sorted) order
  int unmatched_gt = 0;   // false negatives for this image/threshold
};

// dets must arrive sorted by descending score. Each det greedily claims the
// highest-IoU unclaimed same-class gt with IoU >= thresh (ties: lowest gt
// index); a gt is claimed at most once.
MatchResult match(const std::vector<Detection>& dets,
                  const std::vector<std::pair<int, Box>>& gts, double iou_thresh);

// P = TP/(TP+FP), 0 when no detections; R = TP/total_gt, 0 when no gt.
std::pair<double, double> precision_recall(int64_t tp, int64_t fp, int64_t total_gt);

// 101-point interpolated AP over the monotone precision envelope.
double average_precision(std::vector<std::pair<double, bool>> scored, int64_t total_gt);

struct EvalReport {
  std::vector<double> thresholds;       // 0.50 .. 0.95 step 0.05
  std::vector<int64_t> gt_per_class;
  std::vector<std::vector<double>> ap;  // [class][threshold], -1 when class has no gt
  double map50 = 0.0;
  double map5095 = 0.0;
  double precision = 0.0;               // pooled at IoU 0.5
  double recall = 0.0;
  std::vector<std::pair<double, double>> pr_curve;  // (recall, precision) at IoU 0.5

  std::string text() const;
  std::string machine() const;  // `metric,class,threshold,value` lines
};

// Full-dataset evaluation. image_ids is the known-image universe; when empty
// it is derived from the gt records. A detection naming an unknown image id
// is an error.
EvalReport evaluate(const std::vector<DetRecord>& dets, const std::vector<GtRecord>& gts,
                    int num_classes, const std::vector<std::string>& image_ids = {});

}  // namespace hic
