#include "hic/loss.hpp"

#include <cmath>

#include "hic/boxes.hpp"
#include "hic/kernels.hpp"

namespace hic {

double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

std::vector<AssignedTarget> assign(std::span<const std::vector<GtBox>> gts_per_image,
                                   std::span<const HeadGeometry> heads,
                                   double ratio_thresh) {
  std::vector<AssignedTarget> out;
  for (size_t img = 0; img < gts_per_image.size(); ++img) {
    for (size_t gi = 0; gi < gts_per_image[img].size(); ++gi) {
      const GtBox& g = gts_per_image[img][gi];
      check_data(g.cx > 0.0 && g.cx <= 1.0 && g.cy > 0.0 && g.cy <= 1.0 && g.w > 0.0 &&
                     g.w <= 1.0 && g.h > 0.0 && g.h <= 1.0,
                 "assign: gt box outside the normalized (0,1] range");
      for (size_t h = 0; h < heads.size(); ++h) {
        const HeadGeometry& geo = heads[h];
        const double gw = g.w * geo.grid, gh = g.h * geo.grid;
        const double gcx = g.cx * geo.grid, gcy = g.cy * geo.grid;
        for (int a = 0; a < 3; ++a) {
          const AnchorPair& an = geo.anchors[static_cast<size_t>(a)];
          const double ratio = std::max(std::max(gw / an.w, an.w / gw),
                                        std::max(gh / an.h, an.h / gh));
          if (!(ratio < ratio_thresh)) continue;

          const int cx0 = std::min(static_cast<int>(gcx), geo.grid - 1);
          const int cy0 = std::min(static_cast<int>(gcy), geo.grid - 1);
          auto push = [&](int cx, int cy) {
            AssignedTarget t;
            t.image = static_cast<int>(img);
            t.head = static_cast<int>(h);
            t.anchor = a;
            t.cell_x = cx;
            t.cell_y = cy;
            t.gt = g;
            t.gt_index = static_cast<int>(gi);
            out.push_back(t);
          };
          push(cx0, cy0);
          const double fx = gcx - std::floor(gcx), fy = gcy - std::floor(gcy);
          if (fx < 0.5 && gcx > 1.0) push(cx0 - 1, cy0);
          if (fx > 0.5 && gcx < geo.grid - 1.0) push(cx0 + 1, cy0);
          if (fy < 0.5 && gcy > 1.0) push(cx0, cy0 - 1);
          if (fy > 0.5 && gcy < geo.grid - 1.0) push(cx0, cy0 + 1);
        }
      }
    }
  }
  return out;
}

LossResult loss(std::vector<Tensor>& raw_heads, std::span<const HeadGeometry> heads,
                std::span<const AssignedTarget> targets, const LossWeights& weights,
                int num_classes, bool want_grad) {
  check_data(raw_heads.size() == heads.size(), "loss: head count mismatch");
  const int per = 5 + num_classes;
  int64_t obj_cells = 0;
  for (size_t h = 0; h < raw_heads.size(); ++h) {
    const Shape s = raw_heads[h].shape();
    check_shape(s.c == 3 * per, "loss: head " + std::to_string(h) + " channels " +
                                    std::to_string(s.c) + " != 3*(5+nc)");
    check_shape(s.h == heads[h].grid && s.w == heads[h].grid,
                "loss: head " + std::to_string(h) + " grid mismatch");
    obj_cells += static_cast<int64_t>(s.n) * 3 * s.h * s.w;
    if (want_grad) raw_heads[h].ensure_grad();
  }

  // objectness targets: 1 where at least one assignment landed
  std::vector<std::vector<char>> is_obj(raw_heads.size());
  for (size_t h = 0; h < raw_heads.size(); ++h) {
    const Shape s = raw_heads[h].shape();
    is_obj[h].assign(static_cast<size_t>(s.n) * 3 * s.h * s.w, 0);
  }
  auto obj_slot = [&](const AssignedTarget& t) {
    const Shape s = raw_heads[static_cast<size_t>(t.head)].shape();
    return ((static_cast<size_t>(t.image) * 3 + static_cast<size_t>(t.anchor)) * s.h +
            static_cast<size_t>(t.cell_y)) *
               s.w +
           static_cast<size_t>(t.cell_x);
  };
  for (const AssignedTarget& t : targets) is_obj[static_cast<size_t>(t.head)][obj_slot(t)] = 1;

  LossResult res;

  // objectness: pooled mean across every anchor-cell of every head
  for (size_t h = 0; h < raw_heads.size(); ++h) {
    Tensor& raw = raw_heads[h];
    const Shape s = raw.shape();
    size_t slot = 0;
    for (int n = 0; n < s.n; ++n)
      for (int a = 0; a < 3; ++a)
        for (int gy = 0; gy < s.h; ++gy)
          for (int gx = 0; gx < s.w; ++gx, ++slot) {
            const int ch = a * per + 4;
            const double z = raw.at(n, ch, gy, gx);
            const double y = is_obj[h][slot] ? 1.0 : 0.0;
            res.obj += bce_with_logits(z, y);
            if (want_grad)
              raw.grad()[raw.index(n, ch, gy, gx)] += weights.obj *
                                                      (kernels::sigmoid_scalar(z) - y) /
                                                      static_cast<double>(obj_cells);
          }
  }
  res.obj /= static_cast<double>(obj_cells);

  if (!targets.empty()) {
    const double t_count = static_cast<double>(targets.size());
    for (const AssignedTarget& t : targets) {
      Tensor& raw = raw_heads[static_cast<size_t>(t.head)];
      const HeadGeometry& geo = heads[static_cast<size_t>(t.head)];
      const int base = t.anchor * per;

      // class: BCE against one-hot over the class channels
      for (int c = 0; c < num_classes; ++c) {
        const double z = raw.at(t.image, base + 5 + c, t.cell_y, t.cell_x);
        const double y = c == t.gt.class_id ? 1.0 : 0.0;
        res.cls += bce_with_logits(z, y);
        if (want_grad)
          raw.grad()[raw.index(t.image, base + 5 + c, t.cell_y, t.cell_x)] +=
              weights.cls * (kernels::sigmoid_scalar(z) - y) /
              (t_count * static_cast<double>(num_classes));
      }

      // box: decoded prediction vs gt, both in this head's grid units
      const double ztx = raw.at(t.image, base + 0, t.cell_y, t.cell_x);
      const double zty = raw.at(t.image, base + 1, t.cell_y, t.cell_x);
      const double ztw = raw.at(t.image, base + 2, t.cell_y, t.cell_x);
      const double zth = raw.at(t.image, base + 3, t.cell_y, t.cell_x);
      const double sx = kernels::sigmoid_scalar(ztx);
      const double sy = kernels::sigmoid_scalar(zty);
      const double sw = kernels::sigmoid_scalar(ztw);
      const double sh = kernels::sigmoid_scalar(zth);
      const AnchorPair& an = geo.anchors[static_cast<size_t>(t.anchor)];
      Box pred{2.0 * sx - 0.5 + t.cell_x, 2.0 * sy - 0.5 + t.cell_y,
               (2.0 * sw) * (2.0 * sw) * an.w, (2.0 * sh) * (2.0 * sh) * an.h};
      Box gt{t.gt.cx * geo.grid, t.gt.cy * geo.grid, t.gt.w * geo.grid, t.gt.h * geo.grid};
      CiouResult ciou = ciou_loss(pred, gt);
      res.box += ciou.loss;
      if (want_grad) {
        const double scale = weights.box / t_count;
        raw.grad()[raw.index(t.image, base + 0, t.cell_y, t.cell_x)] +=
            scale * ciou.dcx * 2.0 * sx * (1.0 - sx);
        raw.grad()[raw.index(t.image, base + 1, t.cell_y, t.cell_x)] +=
            scale * ciou.dcy * 2.0 * sy * (1.0 - sy);
        raw.grad()[raw.index(t.image, base + 2, t.cell_y, t.cell_x)] +=
            scale * ciou.dw * 8.0 * sw * sw * (1.0 - sw) * an.w;
        raw.grad()[raw.index(t.image, base + 3, t.cell_y, t.cell_x)] +=
            scale * ciou.dh * 8.0 * sh * sh * (1.0 - sh) * an.h;
      }
    }
    res.cls /= t_count * static_cast<double>(num_classes);
    res.box /= t_count;
  }

  res.total = weights.obj * res.obj + weights.box * res.box + weights.cls * res.cls;
  if (!std::isfinite(res.total)) throw NumericError("loss: non-finite total");
  return res;
}

}  // namespace hic
