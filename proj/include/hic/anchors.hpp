#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "hic/common.hpp"

namespace hic {

struct AnchorPair {
  double w = 0.0, h = 0.0;
  double area() const { return w * h; }
  bool operator==(const AnchorPair&) const = default;
};

// Origin-aligned box IoU; the k-means distance is 1 - this.
double wh_iou(const AnchorPair& a, const AnchorPair& b);

// Four groups of three priors bound to strides {4,8,16,32}, stored in input
// pixels; groups ascend by mean area.
struct AnchorSet {
  std::array<std::array<AnchorPair, 3>, 4> groups;

  static AnchorSet defaults();
  static AnchorSet from_flat(std::span<const AnchorPair> pairs);  // 12, regrouped by area
  std::vector<AnchorPair> flat() const;
  void validate() const;
  bool operator==(const AnchorSet&) const = default;
};

struct KmeansResult {
  std::vector<AnchorPair> centers;          // sorted by ascending area
  std::vector<double> objective_trace;      // mean 1-IoU after each accepted step
  int iterations = 0;
};

// Lloyd iterations under the 1-IoU metric with k-means++ seeding. Center
// updates use cluster means and are only accepted while the objective does
// not increase, so objective_trace is non-increasing by construction.
KmeansResult kmeans_anchors(std::span<const AnchorPair> labels, int k, uint64_t seed,
                            int max_iter = 300);

// Fraction of labels whose best anchor has max(w/aw, aw/w, h/ah, ah/h)
// below ratio_thresh.
double best_possible_recall(std::span<const AnchorPair> labels,
                            std::span<const AnchorPair> anchors,
                            double ratio_thresh = 4.0);

struct AnchorCheck {
  AnchorSet anchors;
  bool regenerated = false;
  double bpr_before = 0.0;
  double bpr_after = 0.0;
  std::string report;
};

// Keeps the defaults when their BPR meets the gate (>= semantics), otherwise
// re-clusters the labels into 12 anchors.
AnchorCheck check_or_regenerate(std::span<const AnchorPair> labels,
                                const AnchorSet& defaults, double gate = 0.98,
                                double ratio_thresh = 4.0, uint64_t seed = 0);

}  // namespace hic
