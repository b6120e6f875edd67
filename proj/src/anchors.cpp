#include "hic/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace hic {

double wh_iou(const AnchorPair& a, const AnchorPair& b) {
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

AnchorSet AnchorSet::defaults() {
  // tiny head priors in stride-4 grid units scaled to pixels; the other
  // groups are the stock pixel priors for strides 8/16/32
  AnchorSet s;
  s.groups[0] = {AnchorPair{2.9434 * 4, 4.0435 * 4}, AnchorPair{3.8626 * 4, 8.5592 * 4},
                 AnchorPair{6.8534 * 4, 5.9391 * 4}};
  s.groups[1] = {AnchorPair{10, 13}, AnchorPair{16, 30}, AnchorPair{33, 23}};
  s.groups[2] = {AnchorPair{30, 61}, AnchorPair{62, 45}, AnchorPair{59, 119}};
  s.groups[3] = {AnchorPair{116, 90}, AnchorPair{156, 198}, AnchorPair{373, 326}};
  return s;
}

AnchorSet AnchorSet::from_flat(std::span<const AnchorPair> pairs) {
  check_data(pairs.size() == 12, "anchor set needs exactly 12 pairs, got " +
                                     std::to_string(pairs.size()));
  std::vector<AnchorPair> sorted(pairs.begin(), pairs.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const AnchorPair& a, const AnchorPair& b) { return a.area() < b.area(); });
  AnchorSet s;
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 3; ++i) s.groups[g][i] = sorted[static_cast<size_t>(g) * 3 + i];
  s.validate();
  return s;
}

std::vector<AnchorPair> AnchorSet::flat() const {
  std::vector<AnchorPair> out;
  out.reserve(12);
  for (const auto& g : groups)
    for (const AnchorPair& p : g) out.push_back(p);
  return out;
}

void AnchorSet::validate() const {
  // 2% slack: the stock tiny-head priors overlap the small group's area
  // range, putting their means within a fraction of a percent of each other
  double prev = -1.0;
  for (const auto& g : groups) {
    double mean = 0.0;
    for (const AnchorPair& p : g) {
      check_data(p.w > 0.0 && p.h > 0.0, "anchor pairs must be positive");
      mean += p.area();
    }
    mean /= 3.0;
    check_data(mean >= prev * 0.98, "anchor groups must ascend by mean area");
    prev = mean;
  }
}

namespace {

// Labels are deduplicated into weighted points so that repeating every label
// n times changes nothing: the distinct set and the normalized weights are
// identical, and every draw below depends only on those.
struct WeightedLabels {
  std::vector<AnchorPair> pts;
  std::vector<double> w;
  double total = 0.0;
};

WeightedLabels dedup(std::span<const AnchorPair> labels) {
  std::map<std::pair<double, double>, double> acc;
  for (const AnchorPair& p : labels) acc[{p.w, p.h}] += 1.0;
  WeightedLabels out;
  // weights normalized by the label count: scaling every multiplicity by n
  // yields bit-identical weights, which keeps duplicated inputs exact
  const double n = static_cast<double>(labels.size());
  for (const auto& [key, cnt] : acc) {
    out.pts.push_back(AnchorPair{key.first, key.second});
    out.w.push_back(cnt / n);
    out.total += cnt / n;
  }
  return out;
}

double objective(const WeightedLabels& L, const std::vector<AnchorPair>& centers,
                 std::vector<int>* assign_out) {
  double total = 0.0;
  for (size_t i = 0; i < L.pts.size(); ++i) {
    double best = 2.0;
    int arg = 0;
    for (size_t c = 0; c < centers.size(); ++c) {
      const double d = 1.0 - wh_iou(L.pts[i], centers[c]);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    total += best * L.w[i];
    if (assign_out) (*assign_out)[i] = arg;
  }
  return total / L.total;
}

size_t weighted_pick(const std::vector<double>& weights, double total, Rng& rng) {
  double r = rng.uniform() * total;
  size_t last = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last = i;
    r -= weights[i];
    if (r <= 0.0) return i;
  }
  return last;
}

std::vector<AnchorPair> seed_pp(const WeightedLabels& L, int k, Rng& rng) {
  std::vector<AnchorPair> centers;
  centers.reserve(static_cast<size_t>(k));
  centers.push_back(L.pts[weighted_pick(L.w, L.total, rng)]);
  std::vector<double> dist(L.pts.size());
  while (static_cast<int>(centers.size()) < k) {
    double sum = 0.0;
    for (size_t i = 0; i < L.pts.size(); ++i) {
      double best = 2.0;
      for (const AnchorPair& c : centers) best = std::min(best, 1.0 - wh_iou(L.pts[i], c));
      dist[i] = best * L.w[i];
      sum += dist[i];
    }
    if (sum <= 0.0) {
      centers.push_back(L.pts[centers.size() % L.pts.size()]);
      continue;
    }
    centers.push_back(L.pts[weighted_pick(dist, sum, rng)]);
  }
  return centers;
}

}  // namespace

KmeansResult kmeans_anchors(std::span<const AnchorPair> labels, int k, uint64_t seed,
                            int max_iter) {
  check_data(k >= 1, "kmeans: k must be >= 1");
  for (const AnchorPair& p : labels)
    check_data(p.w > 0.0 && p.h > 0.0, "kmeans: labels must have positive extent");
  const WeightedLabels L = dedup(labels);
  check_data(static_cast<int>(L.pts.size()) >= k,
             "kmeans: only " + std::to_string(L.pts.size()) + " distinct labels for k=" +
                 std::to_string(k));

  Rng rng(seed);
  KmeansResult res;
  std::vector<AnchorPair> centers = seed_pp(L, k, rng);
  std::vector<int> assign(L.pts.size(), -1);
  double obj = objective(L, centers, &assign);
  res.objective_trace.push_back(obj);

  for (int it = 0; it < max_iter; ++it) {
    // weighted mean update per cluster; empty clusters keep their center
    std::vector<AnchorPair> next(centers);
    std::vector<double> sw(centers.size(), 0.0), sh(centers.size(), 0.0), cw(centers.size(), 0.0);
    std::vector<int> members(centers.size(), 0), last(centers.size(), -1);
    for (size_t i = 0; i < L.pts.size(); ++i) {
      const auto c = static_cast<size_t>(assign[i]);
      sw[c] += L.pts[i].w * L.w[i];
      sh[c] += L.pts[i].h * L.w[i];
      cw[c] += L.w[i];
      ++members[c];
      last[c] = static_cast<int>(i);
    }
    for (size_t c = 0; c < centers.size(); ++c) {
      if (members[c] == 1) {
        next[c] = L.pts[static_cast<size_t>(last[c])];  // exact, no mean rounding
      } else if (cw[c] > 0.0) {
        next[c] = AnchorPair{sw[c] / cw[c], sh[c] / cw[c]};
      }
    }

    std::vector<int> next_assign(L.pts.size(), -1);
    const double next_obj = objective(L, next, &next_assign);
    if (next_obj > obj + 1e-15) break;  // mean step no longer improves the 1-IoU objective
    const bool stable = next_assign == assign && next_obj == obj;
    centers = std::move(next);
    assign = std::move(next_assign);
    obj = next_obj;
    res.objective_trace.push_back(obj);
    res.iterations = it + 1;
    if (stable) break;
  }

  std::stable_sort(centers.begin(), centers.end(),
                   [](const AnchorPair& a, const AnchorPair& b) { return a.area() < b.area(); });
  res.centers = std::move(centers);
  return res;
}

double best_possible_recall(std::span<const AnchorPair> labels,
                            std::span<const AnchorPair> anchors, double ratio_thresh) {
  check_data(!anchors.empty(), "bpr: anchor list is empty");
  if (labels.empty()) return 0.0;
  int64_t hit = 0;
  for (const AnchorPair& l : labels) {
    double best = std::numeric_limits<double>::infinity();
    for (const AnchorPair& a : anchors) {
      const double r = std::max(std::max(l.w / a.w, a.w / l.w), std::max(l.h / a.h, a.h / l.h));
      best = std::min(best, r);
    }
    if (best < ratio_thresh) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

AnchorCheck check_or_regenerate(std::span<const AnchorPair> labels, const AnchorSet& defaults,
                                double gate, double ratio_thresh, uint64_t seed) {
  AnchorCheck out;
  const std::vector<AnchorPair> flat = defaults.flat();
  out.bpr_before = best_possible_recall(labels, flat, ratio_thresh);
  char line[160];
  if (out.bpr_before >= gate) {
    out.anchors = defaults;
    out.bpr_after = out.bpr_before;
    std::snprintf(line, sizeof(line),
                  "anchors kept: BPR %.4f >= gate %.2f (ratio_thresh %.2f)\n", out.bpr_before,
                  gate, ratio_thresh);
    out.report = line;
    return out;
  }
  KmeansResult km = kmeans_anchors(labels, 12, seed);
  out.anchors = AnchorSet::from_flat(km.centers);
  out.regenerated = true;
  out.bpr_after = best_possible_recall(labels, km.centers, ratio_thresh);
  std::snprintf(line, sizeof(line),
                "anchors regenerated: BPR %.4f < gate %.2f, k-means BPR %.4f (%d iterations)\n",
                out.bpr_before, gate, out.bpr_after, km.iterations);
  out.report = line;
  return out;
}

}  // namespace hic
