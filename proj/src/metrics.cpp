#include "hic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace hic {

MatchResult match(const std::vector<Detection>& dets,
                  const std::vector<std::pair<int, Box>>& gts, double iou_thresh) {
  for (size_t i = 1; i < dets.size(); ++i)
    check_data(dets[i - 1].score >= dets[i].score, "match: detections not sorted by score");
  MatchResult r;
  r.tp.assign(dets.size(), 0);
  std::vector<char> claimed(gts.size(), 0);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].first != dets[d].class_id) continue;
      const double v = iou(dets[d].box, gts[g].second);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);  // strict > keeps the lowest index on ties
      }
    }
    if (best_gt >= 0) {
      claimed[static_cast<size_t>(best_gt)] = 1;
      r.tp[d] = 1;
    }
  }
  for (char c : claimed)
    if (!c) ++r.unmatched_gt;
  return r;
}

std::pair<double, double> precision_recall(int64_t tp, int64_t fp, int64_t total_gt) {
  const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double r = total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0;
  return {p, r};
}

double average_precision(std::vector<std::pair<double, bool>> scored, int64_t total_gt) {
  check_data(total_gt > 0, "average_precision: undefined without ground truth");
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> prec(scored.size()), rec(scored.size());
  int64_t tp = 0, fp = 0;
  for (size_t i = 0; i < scored.size(); ++i) {
    scored[i].second ? ++tp : ++fp;
    prec[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    rec[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  // monotone envelope from the high-recall side
  for (size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  size_t j = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = static_cast<double>(i) / 100.0;
    while (j < rec.size() && rec[j] < r) ++j;
    ap += j < rec.size() ? prec[j] : 0.0;
  }
  return ap / 101.0;
}

EvalReport evaluate(const std::vector<DetRecord>& dets, const std::vector<GtRecord>& gts,
                    int num_classes, const std::vector<std::string>& image_ids) {
  std::set<std::string> universe(image_ids.begin(), image_ids.end());
  if (universe.empty())
    for (const GtRecord& g : gts) universe.insert(g.image_id);
  for (const DetRecord& d : dets)
    check_data(universe.count(d.image_id) > 0,
               "evaluate: detection references unknown image id `" + d.image_id + "`");

  // group per image; maps keep image ids sorted for deterministic accumulation
  std::map<std::string, std::vector<Detection>> dets_by_image;
  std::map<std::string, std::vector<std::pair<int, Box>>> gts_by_image;
  for (const std::string& id : universe) {
    dets_by_image[id];
    gts_by_image[id];
  }
  for (const DetRecord& d : dets) dets_by_image[d.image_id].push_back(d.det);
  for (const GtRecord& g : gts) {
    check_data(g.class_id >= 0 && g.class_id < num_classes,
               "evaluate: gt class id out of range");
    gts_by_image[g.image_id].push_back({g.class_id, g.box});
  }
  for (auto& [id, v] : dets_by_image)
    std::stable_sort(v.begin(), v.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });

  EvalReport rep;
  for (int i = 0; i < 10; ++i) rep.thresholds.push_back(0.50 + 0.05 * i);
  rep.gt_per_class.assign(static_cast<size_t>(num_classes), 0);
  for (const GtRecord& g : gts) ++rep.gt_per_class[static_cast<size_t>(g.class_id)];

  rep.ap.assign(static_cast<size_t>(num_classes),
                std::vector<double>(rep.thresholds.size(), -1.0));

  // scored[class][threshold] accumulated over images in sorted-id order
  std::vector<std::vector<std::vector<std::pair<double, bool>>>> scored(
      static_cast<size_t>(num_classes),
      std::vector<std::vector<std::pair<double, bool>>>(rep.thresholds.size()));
  std::vector<std::pair<double, bool>> pooled50;

  for (const auto& [id, image_dets] : dets_by_image) {
    const auto& image_gts = gts_by_image[id];
    for (size_t t = 0; t < rep.thresholds.size(); ++t) {
      MatchResult m = match(image_dets, image_gts, rep.thresholds[t]);
      for (size_t d = 0; d < image_dets.size(); ++d) {
        scored[static_cast<size_t>(image_dets[d].class_id)][t].push_back(
            {image_dets[d].score, m.tp[d] != 0});
        if (t == 0) pooled50.push_back({image_dets[d].score, m.tp[d] != 0});
      }
    }
  }

  double map50 = 0.0, map_all = 0.0;
  int64_t classes_with_gt = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (rep.gt_per_class[static_cast<size_t>(c)] == 0) continue;
    ++classes_with_gt;
    for (size_t t = 0; t < rep.thresholds.size(); ++t) {
      const double ap = average_precision(scored[static_cast<size_t>(c)][t],
                                          rep.gt_per_class[static_cast<size_t>(c)]);
      rep.ap[static_cast<size_t>(c)][t] = ap;
      map_all += ap;
      if (t == 0) map50 += ap;
    }
  }
  if (classes_with_gt > 0) {
    rep.map50 = map50 / static_cast<double>(classes_with_gt);
    rep.map5095 =
        map_all / static_cast<double>(classes_with_gt * static_cast<int64_t>(rep.thresholds.size()));
  }

  // pooled precision/recall and PR curve at IoU 0.5
  int64_t tp50 = 0;
  for (const auto& [s, is_tp] : pooled50)
    if (is_tp) ++tp50;
  const int64_t total_gt = static_cast<int64_t>(gts.size());
  std::tie(rep.precision, rep.recall) =
      precision_recall(tp50, static_cast<int64_t>(pooled50.size()) - tp50, total_gt);
  if (total_gt > 0) {
    std::stable_sort(pooled50.begin(), pooled50.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> prec(pooled50.size()), rec(pooled50.size());
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < pooled50.size(); ++i) {
      pooled50[i].second ? ++tp : ++fp;
      prec[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
      rec[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }
    for (size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    size_t j = 0;
    for (int i = 0; i <= 100; ++i) {
      const double r = static_cast<double>(i) / 100.0;
      while (j < rec.size() && rec[j] < r) ++j;
      rep.pr_curve.push_back({r, j < rec.size() ? prec[j] : 0.0});
    }
  }
  return rep;
}

std::string EvalReport::text() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "mAP@0.5 %.6f  mAP@[.5:.95] %.6f  precision %.6f  recall %.6f\n", map50,
                map5095, precision, recall);
  os << buf;
  for (size_t c = 0; c < ap.size(); ++c) {
    if (gt_per_class[c] == 0) {
      std::snprintf(buf, sizeof(buf), "class %zu: no ground truth\n", c);
      os << buf;
      continue;
    }
    std::snprintf(buf, sizeof(buf), "class %zu: gt %lld  AP@0.5 %.6f  AP@[.5:.95] %.6f\n", c,
                  static_cast<long long>(gt_per_class[c]), ap[c][0],
                  [&] {
                    double s = 0;
                    for (double v : ap[c]) s += v;
                    return s / static_cast<double>(ap[c].size());
                  }());
    os << buf;
  }
  return os.str();
}

std::string EvalReport::machine() const {
  std::ostringstream os;
  char buf[160];
  for (size_t c = 0; c < ap.size(); ++c)
    for (size_t t = 0; t < thresholds.size(); ++t) {
      if (ap[c][t] < 0) continue;
      std::snprintf(buf, sizeof(buf), "ap,%zu,%.2f,%.9f\n", c, thresholds[t], ap[c][t]);
      os << buf;
    }
  std::snprintf(buf, sizeof(buf), "map,,0.50,%.9f\n", map50);
  os << buf;
  std::snprintf(buf, sizeof(buf), "map,,0.50:0.95,%.9f\n", map5095);
  os << buf;
  std::snprintf(buf, sizeof(buf), "precision,,0.50,%.9f\n", precision);
  os << buf;
  std::snprintf(buf, sizeof(buf), "recall,,0.50,%.9f\n", recall);
  os << buf;
  for (size_t i = 0; i < pr_curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "pr_precision,%zu,0.50,%.9f\n", i, pr_curve[i].second);
    os << buf;
  }
  return os.str();
}

}  // namespace hic
