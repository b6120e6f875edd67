#include "hic/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hic/kernels.hpp"

namespace hic {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

// Forward-mode scalar carrying partials w.r.t. (pred.cx, pred.cy, pred.w, pred.h).
struct Dual {
  double v = 0.0;
  std::array<double, 4> d{0.0, 0.0, 0.0, 0.0};

  Dual() = default;
  Dual(double val) : v(val) {}  // NOLINT: implicit double lift is the point
  static Dual var(double val, int idx) {
    Dual x(val);
    x.d[static_cast<size_t>(idx)] = 1.0;
    return x;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r(a.v + b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r(a.v - b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  const double inv2 = 1.0 / (b.v * b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv2;
  return r;
}
Dual dmax(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }
Dual dmin(const Dual& a, const Dual& b) { return a.v <= b.v ? a : b; }
Dual datan(const Dual& a) {
  Dual r(std::atan(a.v));
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * s;
  return r;
}

constexpr double kEps = 1e-9;

}  // namespace

CiouResult ciou_loss(const Box& pred, const Box& gt) {
  check_data(gt.w > 0.0 && gt.h > 0.0, "ciou: ground-truth box must have positive area");

  const Dual cx = Dual::var(pred.cx, 0);
  const Dual cy = Dual::var(pred.cy, 1);
  const Dual w = Dual::var(pred.w, 2);
  const Dual h = Dual::var(pred.h, 3);

  const Dual x1 = cx - w * 0.5, x2 = cx + w * 0.5;
  const Dual y1 = cy - h * 0.5, y2 = cy + h * 0.5;

  const Dual iw = dmax(dmin(x2, gt.x2()) - dmax(x1, gt.x1()), 0.0);
  const Dual ih = dmax(dmin(y2, gt.y2()) - dmax(y1, gt.y1()), 0.0);
  const Dual inter = iw * ih;
  const Dual uni = w * h + gt.area() - inter;
  const Dual overlap = inter / uni;

  const Dual rho2 = (cx - gt.cx) * (cx - gt.cx) + (cy - gt.cy) * (cy - gt.cy);
  const Dual cw = dmax(x2, gt.x2()) - dmin(x1, gt.x1());
  const Dual ch = dmax(y2, gt.y2()) - dmin(y1, gt.y1());
  const Dual c2 = cw * cw + ch * ch + kEps;

  const double gt_aspect = std::atan(gt.w / (gt.h + kEps));
  const Dual aspect = datan(w / (h + kEps));
  const Dual dv = (Dual(gt_aspect) - aspect) * (Dual(gt_aspect) - aspect) *
                  (4.0 / (M_PI * M_PI));
  const Dual alpha = dv / (Dual(1.0) - overlap + dv + kEps);

  const Dual loss = Dual(1.0) - overlap + rho2 / c2 + alpha * dv;

  CiouResult r;
  r.loss = loss.v;
  r.dcx = loss.d[0];
  r.dcy = loss.d[1];
  r.dw = loss.d[2];
  r.dh = loss.d[3];
  if (!(std::isfinite(r.loss) && std::isfinite(r.dcx) && std::isfinite(r.dcy) &&
        std::isfinite(r.dw) && std::isfinite(r.dh)))
    throw NumericError("ciou: non-finite result");
  return r;
}

std::vector<Detection> decode(const Tensor& raw_head, const std::array<AnchorPair, 3>& anchors,
                              int stride, double conf_thresh, int batch_index) {
  const Shape s = raw_head.shape();
  check_shape(s.c % 3 == 0 && s.c / 3 >= 6,
              "decode: head channels " + std::to_string(s.c) + " are not 3*(5+nc)");
  const int per = s.c / 3;
  const int nc = per - 5;
  std::vector<Detection> out;
  for (int a = 0; a < 3; ++a)
    for (int gy = 0; gy < s.h; ++gy)
      for (int gx = 0; gx < s.w; ++gx) {
        const int base = a * per;
        const double obj = kernels::sigmoid_scalar(raw_head.at(batch_index, base + 4, gy, gx));
        double best_cls = -std::numeric_limits<double>::infinity();
        int best_id = 0;
        for (int c = 0; c < nc; ++c) {
          const double logit = raw_head.at(batch_index, base + 5 + c, gy, gx);
          if (logit > best_cls) {
            best_cls = logit;
            best_id = c;
          }
        }
        const double score = obj * kernels::sigmoid_scalar(best_cls);
        if (score < conf_thresh) continue;
        const double sx = kernels::sigmoid_scalar(raw_head.at(batch_index, base + 0, gy, gx));
        const double sy = kernels::sigmoid_scalar(raw_head.at(batch_index, base + 1, gy, gx));
        const double sw = kernels::sigmoid_scalar(raw_head.at(batch_index, base + 2, gy, gx));
        const double sh = kernels::sigmoid_scalar(raw_head.at(batch_index, base + 3, gy, gx));
        Detection d;
        d.box.cx = (2.0 * sx - 0.5 + gx) * stride;
        d.box.cy = (2.0 * sy - 0.5 + gy) * stride;
        d.box.w = (2.0 * sw) * (2.0 * sw) * anchors[static_cast<size_t>(a)].w * stride;
        d.box.h = (2.0 * sh) * (2.0 * sh) * anchors[static_cast<size_t>(a)].h * stride;
        d.score = score;
        d.class_id = best_id;
        out.push_back(d);
      }
  return out;
}

namespace {
double logit(double p) { return std::log(p / (1.0 - p)); }
}  // namespace

HeadLogits encode_box(const Box& px, int cell_x, int cell_y, const AnchorPair& anchor_grid,
                      int stride) {
  HeadLogits t;
  t.tx = logit(((px.cx / stride - cell_x) + 0.5) / 2.0);
  t.ty = logit(((px.cy / stride - cell_y) + 0.5) / 2.0);
  t.tw = logit(std::sqrt(px.w / (anchor_grid.w * stride)) / 2.0);
  t.th = logit(std::sqrt(px.h / (anchor_grid.h * stride)) / 2.0);
  return t;
}

namespace {

bool det_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  return a.box.cy < b.box.cy;
}

}  // namespace

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh,
                           bool class_aware) {
  std::vector<Detection> sorted(dets);
  std::stable_sort(sorted.begin(), sorted.end(), det_order);
  std::vector<Detection> kept;
  for (const Detection& d : sorted) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (class_aware && k.class_id != d.class_id) continue;
      if (iou(k.box, d.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::string format_detection(const std::string& image_id, const Detection& d) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s %d %.6f %.6f %.6f %.6f %.6f", image_id.c_str(),
                d.class_id, d.score, d.box.cx, d.box.cy, d.box.w, d.box.h);
  return buf;
}

bool parse_detection_line(const std::string& line, std::string& image_id, Detection& d) {
  char id[128];
  if (std::sscanf(line.c_str(), "%127s %d %lf %lf %lf %lf %lf", id, &d.class_id, &d.score,
                  &d.box.cx, &d.box.cy, &d.box.w, &d.box.h) != 7)
    return false;
  image_id = id;
  return true;
}

}  // namespace hic
